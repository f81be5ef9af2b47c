"""Shared argument checking for the conv/pool kernel backends."""
import numpy as np

_REAL_DTYPES = (np.float32, np.float64)


def check_conv_args(x, w, b):
    """Validate conv2d arguments; returns (B, H, W, C, O, K, pad)."""
    if x.ndim != 4:
        raise ValueError("x must be (batch, height, width, channels)")
    if w.ndim != 4 or w.shape[1] != w.shape[2]:
        raise ValueError("w must be (out_channels, k, k, in_channels)")
    if b.ndim != 1 or b.shape[0] != w.shape[0]:
        raise ValueError("b must be (out_channels,)")
    k = w.shape[1]
    if k % 2 != 1:
        raise ValueError("kernel size must be odd for same-size padding")
    if w.shape[3] != x.shape[3]:
        raise ValueError("in_channels of w and x disagree")
    if x.dtype not in _REAL_DTYPES:
        raise TypeError("kernels support float32/float64 only")
    if w.dtype != x.dtype or b.dtype != x.dtype:
        raise TypeError("x, w, b must share one dtype")
    bsz, h, wd, c = x.shape
    return bsz, h, wd, c, w.shape[0], k, (k - 1) // 2


def check_pool_args(x):
    if x.ndim != 4:
        raise ValueError("x must be (batch, height, width, channels)")
    if x.shape[1] % 2 or x.shape[2] % 2:
        raise ValueError("height and width must be even for 2x2 pooling")
    if x.dtype not in _REAL_DTYPES:
        raise TypeError("kernels support float32/float64 only")


def rotated_kernel(w):
    """Kernel for the input-gradient pass: spatially flipped, channels swapped.

    The gradient w.r.t. the conv input is itself a same-padded correlation of
    the output gradient with this (in_ch, k, k, out_ch) kernel.
    """
    return np.ascontiguousarray(w[:, ::-1, ::-1, :].transpose(3, 1, 2, 0))
