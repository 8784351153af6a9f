"""Seeded random streams for reproducible replications."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constants import Stream


@dataclass(frozen=True)
class RandomStreams:
    """Counter-based random streams for one (scenario, replication) unit.

    Every stream is a Philox generator keyed by the master seed and a spawn
    key ``(scenario_id, rep_id, purpose, *extra)``, so a stream depends only
    on those numbers and never on how work is scheduled.
    """

    master_seed: int
    scenario_id: int = 0
    rep_id: int = 0

    def generator(self, purpose: Stream, *extra: int) -> np.random.Generator:
        """Return the generator for ``purpose`` (and optional sub-keys)."""
        sequence = np.random.SeedSequence(
            entropy=self.master_seed,
            spawn_key=(self.scenario_id, self.rep_id, int(purpose), *extra),
        )
        return np.random.Generator(np.random.Philox(sequence))

    def subject(self, index: int) -> np.random.Generator:
        """Return the within-subject stream of subject ``index``."""
        return self.generator(Stream.SUBJECT, index)

    @property
    def seed(self) -> list[int]:
        """Numbers that reproduce this unit in isolation."""
        return [self.master_seed, self.scenario_id, self.rep_id]
