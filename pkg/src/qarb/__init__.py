"""Numerical toolkit for quantum-mechanical models of arbitrage markets.

Submodules
----------
market      market geometry: short rate, Lagrangian, momenta, curvature, action
sde         Euler-Maruyama ensembles and Nelson stochastic derivatives
spectral    cuboid eigenbases and Hamilton eigenvalues, NUPBR screening
evolution   truncated spectral states, propagation and moment calculus
bubbles     fundamental values, bubbles and their statistics
feynman     constrained path-integral propagator and Guerra-Morato tools
"""

__version__ = "0.1.0"
