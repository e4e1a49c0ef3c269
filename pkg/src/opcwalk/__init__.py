"""Monte Carlo laboratory for weighted random walks on the backbone of oriented percolation."""

__version__ = "0.1.0"
