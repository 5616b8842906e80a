"""Simulation of exciton energy transfer with engineered classical noise.

Modules
-------
model        Hamiltonians, unit scaling and Pauli decomposition.
spectral     Spectral densities, lineshape functions and noise comb profiles.
heom         High-temperature hierarchical equations of motion.
trajectory   Noise synthesis and trajectory ensembles.
grape        Gradient ascent pulse engineering.
ramsey       Ramsey fringe simulation and envelope extraction.
experiments  Config-driven experiment runner (used by the ``eetsim`` CLI).
"""

__version__ = "0.1.0"
