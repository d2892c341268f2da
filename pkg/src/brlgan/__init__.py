"""Bilinear residual conditioning for conditional GANs, with theory checks."""

__version__ = "0.1.0"
