"""Probabilistic one-shot coherence distillation: SDPs, closed forms and checks."""

__version__ = "0.1.0"
