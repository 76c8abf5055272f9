"""Ensemble simulation and quantitative-bound verification for a stochastic
coupled complex/real lattice system driven by state-dependent noise."""

__version__ = "0.1.0"
