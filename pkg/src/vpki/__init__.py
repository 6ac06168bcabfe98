"""Vehicular PKI: authorities, vehicle client, simulator and analysis tools."""

__version__ = "0.1.0"
