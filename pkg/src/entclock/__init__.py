"""Simulator for entanglement-enhanced Ramsey clocks in the symmetric Dicke subspace."""

__version__ = "0.1.0"
