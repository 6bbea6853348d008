"""Multimodal stress detection from biometric signals and facial landmarks."""

__version__ = "0.1.0"
