"""Fixed-budget optimal data acquisition for discounted MDPs."""

__version__ = "0.1.0"
