"""Decentralized (S)GD laboratory.

Simulation of decentralized gradient descent over mixing networks, exact and
first-order closed-form predictions of its stationary points, and diagnostics
for the accompanying non-asymptotic bounds.
"""

__version__ = "0.1.0"
