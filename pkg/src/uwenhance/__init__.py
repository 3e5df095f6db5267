"""Transfer-learning pipeline for underwater image enhancement."""

__version__ = "0.1.0"
