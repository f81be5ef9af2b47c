"""Covariance features for the covariance-matrix CNN.

The detector input is the per-block sample covariance R = X X^H / n, split
into real and imaginary planes of an (m, m, 2) tensor.  The feature is kept
raw on purpose: scaling the received samples scales the covariance linearly,
and the network's large-sample equivalence with an energy detector relies on
that homogeneity, which any normalization would destroy.
"""
import numpy as np


def sample_covariance(x):
    """Sample covariance R = X X^H / n of an (m, n) block, symmetrized.

    The explicit (R + R^H) / 2 step removes the floating-point asymmetry that
    otherwise leaks into downstream eigenvalue and feature computations.
    """
    x = np.asarray(x)
    if x.ndim != 2:
        raise ValueError("x must be a 2-D (m, n) array")
    n = x.shape[1]
    if n < 1:
        raise ValueError("block must contain at least one sample")
    r = (x @ x.conj().T) / n
    r = (r + r.conj().T) / 2.0
    return r.astype(np.complex128, copy=False)


def to_feature_tensor(r, dtype=np.float64):
    """Stack Re(R) and Im(R) into an (m, m, 2) real tensor (no normalization)."""
    r = np.asarray(r)
    if r.ndim != 2 or r.shape[0] != r.shape[1]:
        raise ValueError("r must be a square matrix")
    out = np.empty(r.shape + (2,), dtype=dtype)
    out[..., 0] = r.real
    out[..., 1] = r.imag
    return out


def block_feature(x, dtype=np.float64):
    """Covariance feature tensor of one received block."""
    return to_feature_tensor(sample_covariance(x), dtype=dtype)


def batch_block_features(xs, dtype=np.float64):
    """Covariance feature tensors of a (b, m, n) stack of blocks."""
    xs = np.asarray(xs)
    if xs.ndim != 3:
        raise ValueError("xs must be a (b, m, n) stack of blocks")
    n = xs.shape[2]
    cov = np.einsum("bmn,bkn->bmk", xs, xs.conj()) / n
    cov = (cov + np.conj(np.transpose(cov, (0, 2, 1)))) / 2.0
    out = np.empty(cov.shape + (2,), dtype=dtype)
    out[..., 0] = cov.real
    out[..., 1] = cov.imag
    return out
