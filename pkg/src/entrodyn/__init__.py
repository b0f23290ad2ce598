"""Entropy-driven game dynamics, quantal response equilibria and payoff-based learning."""

__version__ = "0.1.0"
