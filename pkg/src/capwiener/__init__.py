"""Bessel capacities, dyadic capacitary potentials and maximal solutions of -Δu + u^q = 0."""

__version__ = "0.1.0"
