"""Retrieval-augmented health report scoring, boosted-tree prediction, and consultation."""

__version__ = "0.1.0"
