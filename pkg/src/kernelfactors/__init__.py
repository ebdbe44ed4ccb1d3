"""Kernel-PCA factor extraction and diffusion-index forecasting."""

__version__ = "0.1.0"
