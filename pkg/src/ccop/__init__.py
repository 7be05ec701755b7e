"""Analysis of cardinality-constrained optimization problems."""

__version__ = "0.1.0"
