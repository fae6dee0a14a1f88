"""Hard-sphere Rayleigh gas simulator, linear Rayleigh-Boltzmann solver and pruning auditor."""

__version__ = "0.1.0"
