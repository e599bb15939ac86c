"""Variational causal inference for counterfactual generative modeling."""

__version__ = "0.1.0"
