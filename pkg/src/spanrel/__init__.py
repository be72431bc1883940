"""Span-relation analysis toolkit."""

__version__ = "0.1.0"
