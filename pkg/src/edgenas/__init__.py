"""Desk-scale hardware-aware NAS: optimizer and edge agent joined by a store."""

__version__ = "0.1.0"
