"""Data-driven region-of-attraction certification via PWA Lyapunov functions."""

__version__ = "0.1.0"
