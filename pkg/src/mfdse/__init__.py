"""Multi-fidelity design-space exploration for deep-learning accelerators."""

__version__ = "0.1.0"
