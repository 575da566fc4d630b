"""Local track irregularity detection from bridge accelerations."""

__version__ = "0.1.0"
