"""Occupation of a small ball by super-Brownian motion and its lattice analogue.

Modules: ``kernel`` (constants, Green functions, scaling), ``hitting``
(radial semilinear solver), ``moments`` (excursion-measure moment tables),
``simulate`` (critical branching random walk), ``stats`` (fits and
trend tests) and ``harness`` (CLI, persistence, acceptance suite).
"""
__version__ = "0.1.0"
