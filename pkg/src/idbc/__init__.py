"""Bayesian calibration with step-function calibration parameters."""

__version__ = "0.1.0"
