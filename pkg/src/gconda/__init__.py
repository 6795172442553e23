"""Conditional shift on CSBM graphs: closed forms, Monte-Carlo oracles, and optimal-transport domain adaptation."""

__version__ = "0.1.0"
