"""DAG-constrained neural networks: CFCN, CFCN-mod and the causal transformer."""

__version__ = "0.1.0"
