"""Unpredictable walks, intersection tails of oriented path measures, and
percolation transience diagnostics."""
from __future__ import annotations

__version__ = "0.1.0"
