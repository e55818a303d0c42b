"""LOD-based generalized finite elements for quasistatic thermoelasticity on the unit square."""

__version__ = "0.1.0"
