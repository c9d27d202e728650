"""Gated multi-task model for dialog NPS prediction, categorisation and routing."""

__version__ = "0.1.0"
