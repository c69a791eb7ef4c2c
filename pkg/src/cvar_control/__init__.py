"""Optimal control of extremal risk measures (CVaR and friends) by bilevel descent."""
__version__ = "0.1.0"
