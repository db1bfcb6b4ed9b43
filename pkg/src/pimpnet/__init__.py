"""Multimodal part-prototype network for 3D volumes and age."""

__version__ = "0.1.0"
