"""Robust Bayesian sampling from DPD-based generalized posteriors."""
__version__ = "0.1.0"
