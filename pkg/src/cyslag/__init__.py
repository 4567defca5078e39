"""Exterior-algebra and numerical tools for torus-symmetric Calabi-Yau
structures and their special Lagrangian fibrations."""

__version__ = "0.1.0"
