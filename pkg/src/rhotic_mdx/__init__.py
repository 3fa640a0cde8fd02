"""Rhoticity classification from formant and tract-variable features."""

__version__ = "0.1.0"
