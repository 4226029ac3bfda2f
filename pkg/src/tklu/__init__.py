"""LU-matrix pairwise keys, ECDH path keys and tree group keys for sensor networks."""

__version__ = "0.1.0"
