"""Discrete and continuous mean-variance portfolio optimization with ESG caps."""

__version__ = "0.1.0"
