"""Recourse-aware fairness evaluation and burden-reweighted training."""

__version__ = "0.1.0"
