"""Freeway ATM lane-control simulator with attack injection and dual-channel monitoring."""

__version__ = "0.1.0"
