"""Twisted badly approximable points: best approximations, badness
functionals and the Cantor-type construction with its dimension check."""

__version__ = "0.1.0"
