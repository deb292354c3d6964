"""Textual explanations of driving scenes from semantic label maps."""

__version__ = "0.1.0"
