"""Exact and Monte Carlo analysis of first-hitting times of absorbing Markov chains."""

__version__ = "0.1.0"
