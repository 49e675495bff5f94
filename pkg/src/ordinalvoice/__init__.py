"""Ordinal voice screening: synthetic corpora, log-mel features, a small autograd
network with LoRA adapters, ordinal and consistency losses, staged training and
screening metrics."""

__version__ = "0.1.0"
