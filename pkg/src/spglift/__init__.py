"""Differentiable 2D-to-3D human pose lifting with projection-guided training."""

__version__ = "0.1.0"
