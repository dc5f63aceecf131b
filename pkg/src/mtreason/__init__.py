"""Reasoning-augmented machine translation training pipeline at desk scale."""

__version__ = "0.1.0"
