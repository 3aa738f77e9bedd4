"""Desk-scale LLM unlearning workbench."""

__version__ = "0.1.0"
