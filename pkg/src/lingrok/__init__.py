"""Grokking in linear logistic classification: simulation and closed-form checks."""

__version__ = "0.1.0"
