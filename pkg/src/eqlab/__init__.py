"""eqlab: numerical laboratory for local equilibration under complex diagonalizers."""

__version__ = "0.1.0"
