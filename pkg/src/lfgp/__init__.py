"""Latent factor Gaussian process models for dynamic covariance."""

__version__ = "0.1.0"
