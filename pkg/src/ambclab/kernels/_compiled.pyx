# cython: boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled kernel backend: C patch packing plus direct BLAS GEMM calls.

Same results as the numpy backend, but the im2col step runs as compiled
loops and the matmul goes straight to BLAS, which removes the Python-level
overhead that dominates small-batch calls.
"""
import numpy as np

from scipy.linalg.cython_blas cimport dgemm, sgemm

from ._common import check_conv_args, check_pool_args, rotated_kernel

ctypedef fused real:
    float
    double

# Upper bound on the materialized patch matrix per chunk, in elements.
DEF CHUNK_ELEMENTS = 2_000_000


cdef void _pack_patches(real[:, :, :, ::1] xp, real[:, ::1] cols,
                        Py_ssize_t b0, Py_ssize_t bc, Py_ssize_t h,
                        Py_ssize_t wd, Py_ssize_t k, Py_ssize_t c) noexcept nogil:
    cdef Py_ssize_t r = 0, bi, i, j, ki, kj, cc, col
    for bi in range(bc):
        for i in range(h):
            for j in range(wd):
                col = 0
                for ki in range(k):
                    for kj in range(k):
                        for cc in range(c):
                            cols[r, col] = xp[b0 + bi, i + ki, j + kj, cc]
                            col += 1
                r += 1


cdef void _gemm_cols_wT(real* cols, real* wf, real* out,
                        int rows, int o, int kc, real beta) noexcept nogil:
    # out (rows, o) row-major = cols (rows, kc) @ wf (o, kc)^T, via Fortran BLAS
    cdef real one = 1.0
    cdef char ct = c'T', cn = c'N'
    if real is float:
        sgemm(&ct, &cn, &o, &rows, &kc, &one, wf, &kc, cols, &kc, &beta, out, &o)
    else:
        dgemm(&ct, &cn, &o, &rows, &kc, &one, wf, &kc, cols, &kc, &beta, out, &o)


cdef void _gemm_colsT_gy(real* cols, real* gy, real* tmp,
                         int rows, int o, int kc) noexcept nogil:
    # tmp (o, kc) row-major = gy (rows, o)^T @ cols (rows, kc), via Fortran BLAS.
    # The caller accumulates tmp into the weight gradient afterwards: letting
    # BLAS accumulate in place (beta=1) rounds differently once it splits the
    # K loop into panels, which would break bit-parity with the numpy backend.
    cdef real one = 1.0, zero = 0.0
    cdef char ct = c'T', cn = c'N'
    if real is float:
        sgemm(&cn, &ct, &kc, &o, &rows, &one, cols, &kc, gy, &o, &zero, tmp, &kc)
    else:
        dgemm(&cn, &ct, &kc, &o, &rows, &one, cols, &kc, gy, &o, &zero, tmp, &kc)


def _conv_forward_impl(real[:, :, :, ::1] xp, real[:, ::1] wf,
                       real[:, :, :, ::1] y, Py_ssize_t k):
    cdef Py_ssize_t bsz = y.shape[0], h = y.shape[1], wd = y.shape[2], o = y.shape[3]
    cdef Py_ssize_t c = xp.shape[3], kc = wf.shape[1]
    cdef Py_ssize_t chunk_b = max(1, CHUNK_ELEMENTS // kc // max(1, h * wd))
    cols_np = np.empty((chunk_b * h * wd, kc),
                       dtype=np.float32 if real is float else np.float64)
    cdef real[:, ::1] cols = cols_np
    cdef Py_ssize_t b0 = 0, bc
    cdef real beta = 0.0
    while b0 < bsz:
        bc = min(chunk_b, bsz - b0)
        with nogil:
            _pack_patches(xp, cols, b0, bc, h, wd, k, c)
            _gemm_cols_wT(&cols[0, 0], &wf[0, 0], &y[b0, 0, 0, 0],
                          <int> (bc * h * wd), <int> o, <int> kc, beta)
        b0 += bc


def _conv_gw_impl(real[:, :, :, ::1] xp, real[:, :, :, ::1] gy,
                  real[:, ::1] gwf, Py_ssize_t k):
    cdef Py_ssize_t bsz = gy.shape[0], h = gy.shape[1], wd = gy.shape[2], o = gy.shape[3]
    cdef Py_ssize_t c = xp.shape[3], kc = gwf.shape[1]
    cdef Py_ssize_t chunk_b = max(1, CHUNK_ELEMENTS // kc // max(1, h * wd))
    dtype = np.float32 if real is float else np.float64
    cols_np = np.empty((chunk_b * h * wd, kc), dtype=dtype)
    tmp_np = np.empty((o, kc), dtype=dtype)
    cdef real[:, ::1] cols = cols_np
    cdef real[:, ::1] tmp = tmp_np
    cdef Py_ssize_t b0 = 0, bc, i, j
    while b0 < bsz:
        bc = min(chunk_b, bsz - b0)
        with nogil:
            _pack_patches(xp, cols, b0, bc, h, wd, k, c)
            _gemm_colsT_gy(&cols[0, 0], &gy[b0, 0, 0, 0], &tmp[0, 0],
                           <int> (bc * h * wd), <int> o, <int> kc)
            for i in range(o):
                for j in range(kc):
                    gwf[i, j] += tmp[i, j]
        b0 += bc


def _maxpool_impl(real[:, :, :, ::1] x, real[:, :, :, ::1] y,
                  long long[:, :, :, ::1] idx):
    cdef Py_ssize_t bsz = y.shape[0], h2 = y.shape[1], w2 = y.shape[2], c = y.shape[3]
    cdef Py_ssize_t b, i, j, cc
    cdef long long slot
    cdef real best, v
    with nogil:
        for b in range(bsz):
            for i in range(h2):
                for j in range(w2):
                    for cc in range(c):
                        # scan order (0,0),(0,1),(1,0),(1,1); strict > keeps the first
                        best = x[b, 2 * i, 2 * j, cc]
                        slot = 0
                        v = x[b, 2 * i, 2 * j + 1, cc]
                        if v > best:
                            best = v
                            slot = 1
                        v = x[b, 2 * i + 1, 2 * j, cc]
                        if v > best:
                            best = v
                            slot = 2
                        v = x[b, 2 * i + 1, 2 * j + 1, cc]
                        if v > best:
                            best = v
                            slot = 3
                        y[b, i, j, cc] = best
                        idx[b, i, j, cc] = slot


def _maxpool_bwd_impl(long long[:, :, :, ::1] idx, real[:, :, :, ::1] gy,
                      real[:, :, :, ::1] gx):
    cdef Py_ssize_t bsz = gy.shape[0], h2 = gy.shape[1], w2 = gy.shape[2], c = gy.shape[3]
    cdef Py_ssize_t b, i, j, cc
    cdef long long slot
    with nogil:
        for b in range(bsz):
            for i in range(h2):
                for j in range(w2):
                    for cc in range(c):
                        slot = idx[b, i, j, cc]
                        gx[b, 2 * i + (slot >> 1), 2 * j + (slot & 1), cc] = gy[b, i, j, cc]


def conv2d_forward(x, w, b):
    """Same-size zero-padded cross-correlation plus bias: (B,H,W,C)->(B,H,W,O)."""
    x = np.ascontiguousarray(x)
    w = np.ascontiguousarray(w)
    b = np.ascontiguousarray(b)
    bsz, h, wd, c, o, k, pad = check_conv_args(x, w, b)
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    wf = np.ascontiguousarray(w.reshape(o, -1))
    y = np.empty((bsz, h, wd, o), dtype=x.dtype)
    _conv_forward_impl(xp, wf, y, k)
    y += b
    return y


def conv2d_backward(x, w, gy):
    """Gradients of conv2d_forward w.r.t. (x, w, b) given the output gradient."""
    x = np.ascontiguousarray(x)
    w = np.ascontiguousarray(w)
    bsz, h, wd, c, o, k, pad = check_conv_args(x, w, np.zeros(w.shape[0], w.dtype))
    gy = np.ascontiguousarray(gy, dtype=x.dtype)
    if gy.shape != (bsz, h, wd, o):
        raise ValueError("gy shape does not match the forward output")
    gb = gy.sum(axis=(0, 1, 2))

    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    gwf = np.zeros((o, k * k * c), dtype=x.dtype)
    _conv_gw_impl(xp, gy, gwf, k)
    gw = gwf.reshape(w.shape)

    wr = rotated_kernel(w)
    gx = conv2d_forward(gy, wr, np.zeros(c, dtype=x.dtype))
    return gx, gw, gb


def maxpool2_forward(x):
    """2x2, stride-2 max pooling; returns (pooled, argmax slot in scan order)."""
    x = np.ascontiguousarray(x)
    check_pool_args(x)
    bsz, h, wd, c = x.shape
    y = np.empty((bsz, h // 2, wd // 2, c), dtype=x.dtype)
    idx = np.empty((bsz, h // 2, wd // 2, c), dtype=np.int64)
    _maxpool_impl(x, y, idx)
    return y, idx


def maxpool2_backward(idx, gy, input_hw):
    """Scatter the output gradient back to each window's argmax position."""
    h, wd = input_hw
    gy = np.ascontiguousarray(gy)
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    bsz, h2, w2, c = gy.shape
    if (h, wd) != (2 * h2, 2 * w2):
        raise ValueError("input_hw does not match the pooled gradient shape")
    if idx.shape != gy.shape:
        raise ValueError("idx and gy shapes disagree")
    gx = np.zeros((bsz, h, wd, c), dtype=gy.dtype)
    _maxpool_bwd_impl(idx, gy, gx)
    return gx
