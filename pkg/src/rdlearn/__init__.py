"""Ratio-divergence and KL-divergence training of RBMs against target energies."""

__version__ = "0.1.0"
