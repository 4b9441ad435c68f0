"""Semi-supervised traffic classification from sampled packet time series."""

__version__ = "0.1.0"
