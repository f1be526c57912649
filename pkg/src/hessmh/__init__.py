"""Hessian-preconditioned Metropolis-Hastings samplers for concentrating posteriors."""

__version__ = "0.1.0"
