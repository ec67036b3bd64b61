"""sacelab: invariant measures of the 1D stochastic Allen-Cahn equation at desk scale."""

__version__ = "0.1.0"
