"""Simulator for a microtoroidal-resonator quantum repeater."""

__version__ = "0.1.0"
