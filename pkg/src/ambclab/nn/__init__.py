"""Minimal reverse-mode neural-network engine used by the covariance CNN.

Layers operate on batched (B, ...) numpy arrays in float32 or float64,
cache whatever the backward pass needs, and expose their parameters and
gradients by name.  Freezing a layer (trainable = False) keeps its
parameters bit-identical through any amount of training.
"""
from .layers import Conv2d, Dense, Dropout, Flatten, MaxPool2, Relu  # noqa: F401
from .losses import cross_entropy, softmax, softmax_xent_grad  # noqa: F401
from .adam import Adam  # noqa: F401
from .gradcheck import fd_grad, max_relative_error  # noqa: F401
