"""Simulation and adaptive predistortion of electro-optic and acousto-optic modulators."""
__version__ = "0.1.0"
