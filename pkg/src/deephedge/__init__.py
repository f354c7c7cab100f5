"""Risk-averse actor-critic hedging of option books on simulated markets."""

__version__ = "0.1.0"
