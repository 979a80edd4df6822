"""Joint time allocation, trajectory and power design for a full-duplex UAV doing
target sensing plus learning-oriented data collection."""

__version__ = "0.1.0"
