"""Portability diagnostics for binary classifiers moved across patient populations."""

__version__ = "0.1.0"
