"""Interbank fraud co-occurrence surveillance pipeline."""

__version__ = "0.1.0"
