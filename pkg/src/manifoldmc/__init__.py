"""Geodesic Monte Carlo over Stiefel and Grassmann manifolds.

Bayesian linear dimensionality reduction with orthonormal-frame or subspace
parameters, sampled by Hamiltonian Monte Carlo whose position updates follow
exact manifold geodesics.
"""

__version__ = "0.1.0"
