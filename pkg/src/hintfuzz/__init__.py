"""Whitebox REST fuzzing with LLM-assisted mutation hints."""

__version__ = "0.1.0"
