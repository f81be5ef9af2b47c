"""Layers: conv, dense, relu, 2x2 max pool, flatten, inverted dropout.

Weight layers draw Kaiming fan-in initial values (std = sqrt(2 / fan_in))
and zero biases.  forward(train=True) enables stochastic behaviour
(dropout); backward must be called after a training-mode forward and
consumes the cached activations.
"""
import warnings

import numpy as np

from .. import kernels


class Layer:
    """Base layer: stateless by default, with no parameters."""

    trainable = False

    def forward(self, x, train=False, rng=None):
        raise NotImplementedError

    def backward(self, gy):
        raise NotImplementedError

    def params(self):
        return {}

    def grads(self):
        return {}


class Conv2d(Layer):
    """Same-size zero-padded 3x3 (or any odd k) cross-correlation plus bias."""

    trainable = True

    def __init__(self, in_channels, out_channels, ksize=3, dtype=np.float32, rng=None):
        fan_in = ksize * ksize * in_channels
        if rng is None:
            w = np.zeros((out_channels, ksize, ksize, in_channels))
        else:
            w = rng.standard_normal((out_channels, ksize, ksize, in_channels))
            w *= np.sqrt(2.0 / fan_in)
        self.w = np.ascontiguousarray(w, dtype=dtype)
        self.b = np.zeros(out_channels, dtype=dtype)
        self.gw = None
        self.gb = None
        self._x = None

    def forward(self, x, train=False, rng=None):
        self._x = x
        return kernels.conv2d_forward(x, self.w, self.b)

    def backward(self, gy):
        gx, self.gw, self.gb = kernels.conv2d_backward(self._x, self.w, gy)
        return gx

    def params(self):
        return {"w": self.w, "b": self.b}

    def grads(self):
        return {"w": self.gw, "b": self.gb}


class Dense(Layer):
    """Affine map y = x W^T + b on (B, in) batches."""

    trainable = True

    def __init__(self, in_dim, out_dim, dtype=np.float32, rng=None):
        if rng is None:
            w = np.zeros((out_dim, in_dim))
        else:
            w = rng.standard_normal((out_dim, in_dim)) * np.sqrt(2.0 / in_dim)
        self.w = np.ascontiguousarray(w, dtype=dtype)
        self.b = np.zeros(out_dim, dtype=dtype)
        self.gw = None
        self.gb = None
        self._x = None

    def forward(self, x, train=False, rng=None):
        self._x = x
        return x @ self.w.T + self.b

    def backward(self, gy):
        self.gw = gy.T @ self._x
        self.gb = gy.sum(axis=0)
        return gy @ self.w

    def params(self):
        return {"w": self.w, "b": self.b}

    def grads(self):
        return {"w": self.gw, "b": self.gb}


class Relu(Layer):
    """Elementwise max(x, 0); the gradient at exactly 0 is 0."""

    def forward(self, x, train=False, rng=None):
        self._mask = x > 0
        return x * self._mask

    def backward(self, gy):
        return gy * self._mask


class MaxPool2(Layer):
    """2x2, stride-2 max pooling; ties route the gradient to the first
    maximum in row-major window scan order."""

    def forward(self, x, train=False, rng=None):
        self._hw = (x.shape[1], x.shape[2])
        y, self._idx = kernels.maxpool2_forward(x)
        return y

    def backward(self, gy):
        return kernels.maxpool2_backward(self._idx, gy, self._hw)


class Flatten(Layer):
    """(B, H, W, C) -> (B, H*W*C)."""

    def forward(self, x, train=False, rng=None):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, gy):
        return gy.reshape(self._shape)


class Dropout(Layer):
    """Inverted dropout: survivors are scaled by 1/(1-rate) during training
    so the evaluation pass is a plain identity."""

    def __init__(self, rate):
        if not 0.0 <= rate <= 1.0:
            raise ValueError("dropout rate must be in [0, 1]")
        self.rate = rate
        self._scale = None

    def forward(self, x, train=False, rng=None):
        if not train or self.rate == 0.0:
            self._scale = None
            return x
        if self.rate == 1.0:
            warnings.warn("dropout rate 1.0 zeroes the activations", RuntimeWarning)
            self._scale = np.zeros_like(x)
            return self._scale
        if rng is None:
            raise ValueError("training-mode dropout needs an rng")
        keep = rng.random(x.shape) >= self.rate
        self._scale = keep.astype(x.dtype) / (1.0 - self.rate)
        return x * self._scale

    def backward(self, gy):
        if self._scale is None:
            return gy
        return gy * self._scale
