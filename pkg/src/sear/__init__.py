"""Chunked max-entropy actor-critic with a causal multi-horizon critic."""

__version__ = "0.1.0"
