"""Random walk on dynamical percolation: simulator and verification harness."""

__version__ = "0.1.0"
