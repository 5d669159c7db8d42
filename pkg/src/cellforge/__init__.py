"""Boundary-identical microstructure datasets and fast multiscale design."""

__version__ = "0.1.0"
