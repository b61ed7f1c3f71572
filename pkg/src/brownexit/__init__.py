"""Brownian exit-time toolkit: geometry, kernels, PDE oracles, samplers, capacities."""

__version__ = "0.1.0"
