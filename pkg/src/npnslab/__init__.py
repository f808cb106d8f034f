"""Pseudo-spectral simulation and verification lab for the stochastic Nernst-Planck-Navier-Stokes system."""

__version__ = "0.1.0"
