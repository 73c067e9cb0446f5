"""Elastic tree-shaped query engine simulator with SLA-driven layout allocation."""

__version__ = "0.1.0"
