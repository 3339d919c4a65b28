"""Temporally consistent human depth/normal estimation with image-to-video diffusion, at desk scale."""

__version__ = "0.1.0"
