"""Robustness benchmarking of knowledge graph embeddings under non-adversarial perturbations."""

__version__ = "0.1.0"
