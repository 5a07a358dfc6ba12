"""Recency-weighted performance factors models, BKT-family simulators and a
model-selection harness for student practice logs."""

__version__ = "0.1.0"
