"""Gradient-guided layer pruning and sign-based layer merging for toy transformers."""

__version__ = "0.1.0"
