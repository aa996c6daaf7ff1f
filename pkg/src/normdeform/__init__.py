"""Normalized solutions of radial Schrodinger-type problems by deformation on an augmented manifold."""
__version__ = "0.1.0"
