"""Simulation, training and identifiability checks for latent causal models
learned from multi-domain data."""

__version__ = "0.1.0"
