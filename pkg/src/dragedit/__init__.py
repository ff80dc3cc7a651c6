"""dragedit: point-drag image editing on a toy pixel-space diffusion model."""

__version__ = "0.1.0"
