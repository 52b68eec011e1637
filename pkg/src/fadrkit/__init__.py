"""Theta-family IMEX solvers for time-fractional advection-reaction-diffusion."""

__version__ = "0.1.0"
