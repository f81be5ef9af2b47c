"""Pure-numpy kernel backend: im2col patch extraction plus BLAS matmul.

Patch extraction goes through sliding_window_view (no copy) and is
materialized chunk by chunk, so peak memory stays bounded for large batches.
"""
import numpy as np

from ._common import check_conv_args, check_pool_args, rotated_kernel

# Upper bound on the materialized patch matrix per chunk, in elements.
_CHUNK_ELEMENTS = 2_000_000


def _patch_view(xp, k):
    """(B, H, W, K, K, C) sliding windows of the padded input (a view)."""
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    return win.transpose(0, 1, 2, 4, 5, 3)


def _batch_chunks(bsz, h, wd, kkc):
    rows = max(1, _CHUNK_ELEMENTS // max(1, h * wd * kkc))
    step = max(1, rows)
    for start in range(0, bsz, step):
        yield start, min(bsz, start + step)


def conv2d_forward(x, w, b):
    """Same-size zero-padded cross-correlation plus bias: (B,H,W,C)->(B,H,W,O)."""
    bsz, h, wd, c, o, k, pad = check_conv_args(x, w, b)
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    win = _patch_view(xp, k)
    wf = w.reshape(o, -1)
    y = np.empty((bsz, h, wd, o), dtype=x.dtype)
    for b0, b1 in _batch_chunks(bsz, h, wd, wf.shape[1]):
        cols = win[b0:b1].reshape((b1 - b0) * h * wd, -1)
        y[b0:b1] = (cols @ wf.T).reshape(b1 - b0, h, wd, o)
    y += b
    return y


def conv2d_backward(x, w, gy):
    """Gradients of conv2d_forward w.r.t. (x, w, b) given the output gradient."""
    bsz, h, wd, c, o, k, pad = check_conv_args(x, w, np.zeros(w.shape[0], w.dtype))
    gy = np.ascontiguousarray(gy, dtype=x.dtype)
    if gy.shape != (bsz, h, wd, o):
        raise ValueError("gy shape does not match the forward output")
    gb = gy.sum(axis=(0, 1, 2))

    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    win = _patch_view(xp, k)
    gwf = np.zeros((o, k * k * c), dtype=x.dtype)
    for b0, b1 in _batch_chunks(bsz, h, wd, k * k * c):
        cols = win[b0:b1].reshape((b1 - b0) * h * wd, -1)
        gwf += gy[b0:b1].reshape(-1, o).T @ cols
    gw = gwf.reshape(w.shape)

    # dL/dx is the same-padded correlation of gy with the rotated kernel.
    wr = rotated_kernel(w)
    gx = conv2d_forward(gy, wr, np.zeros(c, dtype=x.dtype))
    return gx, gw, gb


def maxpool2_forward(x):
    """2x2, stride-2 max pooling; returns (pooled, argmax slot in scan order)."""
    check_pool_args(x)
    bsz, h, wd, c = x.shape
    xr = (x.reshape(bsz, h // 2, 2, wd // 2, 2, c)
           .transpose(0, 1, 3, 5, 2, 4)
           .reshape(bsz, h // 2, wd // 2, c, 4))
    idx = xr.argmax(axis=-1).astype(np.int64)  # first max wins ties
    y = np.take_along_axis(xr, idx[..., None], axis=-1)[..., 0]
    return y, idx


def maxpool2_backward(idx, gy, input_hw):
    """Scatter the output gradient back to each window's argmax position."""
    h, wd = input_hw
    bsz, h2, w2, c = gy.shape
    if (h, wd) != (2 * h2, 2 * w2):
        raise ValueError("input_hw does not match the pooled gradient shape")
    g4 = np.zeros((bsz, h2, w2, c, 4), dtype=gy.dtype)
    np.put_along_axis(g4, idx[..., None], gy[..., None], axis=-1)
    return (g4.reshape(bsz, h2, w2, c, 2, 2)
              .transpose(0, 1, 4, 2, 5, 3)
              .reshape(bsz, h, wd, c))
