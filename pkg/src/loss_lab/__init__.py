"""Loss-function comparisons for cost-sensitive classification and tabular RL."""

__version__ = "0.1.0"
