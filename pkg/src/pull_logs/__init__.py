"""Log anomaly detection from inaccurate failure-window labels via iterative PU learning."""

__version__ = "0.1.0"
