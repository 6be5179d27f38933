"""Least-cost FACTS susceptance placement for congested DC power-flow grids."""

__version__ = "0.1.0"
