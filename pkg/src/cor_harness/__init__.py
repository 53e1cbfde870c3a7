"""Batch experiment harness for rank-then-answer retrieval-augmented generation."""

__version__ = "0.1.0"
