"""Learnable random-feature kernels with data-dependent spectral samplers,
MMD-family losses, and desk-scale training and audit harnesses."""

__version__ = "0.1.0"
