"""Structured Bayesian distributed compressed sensing (JSM-1, BKF prior)."""

__version__ = "0.1.0"
