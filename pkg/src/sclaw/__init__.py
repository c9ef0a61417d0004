"""Stochastic scalar conservation laws on the periodic line.

Finite-volume solvers for the scaled dynamics and their flux-free twin,
kinetic-formulation diagnostics with explicit certificate bounds, a
rare-event Monte Carlo harness, and a control-action rate estimator.
"""

__version__ = "0.1.0"
