"""Soliton normal forms for Hamiltonian PDE on a periodic 1D grid."""

__version__ = "0.1.0"
