"""Spectral BRDF compression with fused tri-plane fields."""

__version__ = "0.1.0"
