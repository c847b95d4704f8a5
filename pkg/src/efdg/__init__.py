"""Exponentially fitted IIPG-0 method with a CR/Z block solver."""

__version__ = "0.1.0"
