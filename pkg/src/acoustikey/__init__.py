"""Simulated inaudible-acoustic key agreement between two devices."""

__version__ = "0.1.0"
