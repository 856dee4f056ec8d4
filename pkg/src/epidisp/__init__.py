"""Epidemic count-panel simulation and inference under superspreading."""

from .renewal import AGE_GROUPS

__version__ = "0.1.0"

__all__ = ["AGE_GROUPS", "__version__"]
