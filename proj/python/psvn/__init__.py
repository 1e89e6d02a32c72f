"""Projected Stein variational Newton with SVGD and SVN baselines."""

from ._core import *  # noqa: F401,F403
from ._core import ConfigInvalid, TransportConfig, run

__all__ = [name for name in dir() if not name.startswith("_")]
