"""Monte Carlo laboratory for nonlinear stochastic integrals and their L2 projection."""

__version__ = "0.1.0"
