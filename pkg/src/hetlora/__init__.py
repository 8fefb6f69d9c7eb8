"""Federated LoRA simulator with rank-heterogeneous aggregation strategies."""

__version__ = "0.1.0"
