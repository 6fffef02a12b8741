"""Federated learning with importance-tiered Gaussian differential privacy."""

__version__ = "0.1.0"
