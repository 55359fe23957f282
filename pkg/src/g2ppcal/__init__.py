"""Neural-network calibration of the two-factor G2++ short-rate model."""

__version__ = "0.1.0"
