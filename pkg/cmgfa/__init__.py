"""Constrained maximum-likelihood estimation for mixtures of Gaussian factor analyzers."""

__version__ = "0.1.0"
