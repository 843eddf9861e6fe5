"""Stochastic recursive variance-reduced policy gradient (SRVR-PG) and friends."""

__version__ = "0.1.0"
