"""Hypergraph and graph networks for outcome prediction on tabular radiomic features."""

__version__ = "0.1.0"
