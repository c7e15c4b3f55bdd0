"""Hybrid rough SDE solvers and Monte Carlo Feynman-Kac estimators for rough Kolmogorov equations."""

__version__ = "0.1.0"
