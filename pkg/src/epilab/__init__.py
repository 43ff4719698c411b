"""Epileptor seizure-model analysis: simulation, stabilization, passivity and output design."""

__version__ = "0.1.0"
