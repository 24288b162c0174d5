"""Deterministic particle (blob) method for nonlinear diffusion equations.

Particles follow the velocity field of a mollified, doubly regularized
internal energy; the package provides the scalar convex analysis, mollifier
kernels, particle ensembles and metrics, closed-form reference solutions,
the time integrator with its diagnostics, and a command-line front end.
"""

__version__ = "0.1.0"
