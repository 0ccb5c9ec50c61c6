"""Battery-aware receding-horizon task scheduling for LEO satellites."""

__version__ = "0.1.0"
