"""Desk-scale simulator for autonomous fruit and vegetable chopping."""

__version__ = "0.1.0"
