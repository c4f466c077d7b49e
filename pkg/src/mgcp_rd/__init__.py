"""Regularized distributed pairwise estimation for multi-output GPs."""

__version__ = "0.1.0"
