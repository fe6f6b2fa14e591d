"""Adversarial-sample purification and detection testbed for speaker verification."""

__version__ = "0.1.0"
