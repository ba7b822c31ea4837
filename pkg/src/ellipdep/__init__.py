"""Dependence-structure analytics for elliptical, pseudo-elliptical and Archimedean copulas."""

__version__ = "0.1.0"
