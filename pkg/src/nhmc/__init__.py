"""Nonhomogeneous Markov chains: ergodic diagnostics, CLT and moderate deviation checks."""

__version__ = "0.1.0"
