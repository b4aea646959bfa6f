"""solitonlab: numerics for multi-soliton dynamics of the nonlinear
Schroedinger equation -- ground states, linearized spectra, modulation
tracking, and dispersive-decay measurements."""

__version__ = "0.1.0"
