"""Overdamped, nonreversible and Stratonovich-perturbed Langevin samplers with spectral oracles."""

__version__ = "0.1.0"
