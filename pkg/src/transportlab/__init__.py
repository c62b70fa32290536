"""Transport coefficients of periodic tight-binding models."""

__version__ = "0.1.0"
