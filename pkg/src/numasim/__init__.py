"""Deterministic simulator of NUMA scheduling and page-table placement policies."""

__version__ = "0.1.0"
