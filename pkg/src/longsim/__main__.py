"""Run ``python -m longsim``."""

import sys

from .cli import main

sys.exit(main())
