"""Spatio-temporal flood forecasting with graph transformer networks."""

__version__ = "0.1.0"
