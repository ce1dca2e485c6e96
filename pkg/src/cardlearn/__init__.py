"""Data-agnostic learned cardinality estimation from (query, cardinality) pairs."""

__version__ = "0.1.0"
