"""Latency-coded ANN-to-SNN conversion, simulation and cost modelling."""

__version__ = "0.1.0"
