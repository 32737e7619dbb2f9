"""Simulation of continual unsharp position measurement on a lattice.

Single kicks, Poisson-timed jump trajectories, indistinguishable-particle
mixing, and the mean-field and diffusive limits, with dense master-equation
oracles for cross-checking the Monte Carlo ensembles.
"""

__version__ = "0.1.0"
