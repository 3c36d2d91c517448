"""Curriculum sampling strategies for attention-based TSP solvers."""

__version__ = "0.1.0"
