"""Noise-robust probabilistic classification at desk scale.

Label-quality-aware training samples the semantic representation from a
learned per-sample Gaussian; data-quality-aware inference models each
embedding as a draw around its class weight vector and uses the learned
variance to damp prediction confidence.
"""

from . import data, generalized, inference, kernels, losses, metrics, model, training

__all__ = [
    "data",
    "generalized",
    "inference",
    "kernels",
    "losses",
    "metrics",
    "model",
    "training",
]

__version__ = "0.1.0"
