"""Multimodal instance failure detection over metrics, logs and traces."""

__version__ = "0.1.0"
