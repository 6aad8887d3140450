"""Outage transmission and common-randomness capacities of MIMO slow-fading channels."""

__version__ = "0.1.0"
