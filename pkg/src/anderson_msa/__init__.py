"""Finite-volume numerics for multiscale analysis of the lattice Anderson model."""

__version__ = "0.1.0"
