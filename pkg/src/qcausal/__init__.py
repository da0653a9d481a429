"""Quantum causal models: process matrices, Markov models and causal discovery."""

__version__ = "0.1.0"
