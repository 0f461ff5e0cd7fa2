"""Text-motion alignment pretraining and 2D-to-3D pose lifting at desk scale."""

__version__ = "0.1.0"
