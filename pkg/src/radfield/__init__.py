"""Radiance-field reconstruction toolkit: NeRF, Gaussian splatting and blur filtering."""

__version__ = "0.1.0"
