"""Rotary angle encoding with a magnetically modulated optical circulator."""

__version__ = "0.1.0"
