"""Central finite-difference gradient checking utilities."""
import numpy as np


def fd_grad(loss_fn, arr, step=1e-4):
    """Central-difference gradient of loss_fn w.r.t. every entry of arr.

    arr is perturbed in place (and restored); loss_fn takes no arguments and
    must see the mutation, i.e. it must read the same array object.
    """
    if arr.dtype != np.float64:
        raise TypeError("finite differences need float64 parameters")
    grad = np.empty_like(arr)
    flat = arr.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + step
        up = loss_fn()
        flat[i] = saved - step
        down = loss_fn()
        flat[i] = saved
        gflat[i] = (up - down) / (2.0 * step)
    return grad


def max_relative_error(a, b):
    """Largest entrywise difference, relative to the larger tensor magnitude."""
    a = np.asarray(a)
    b = np.asarray(b)
    denom = max(np.abs(a).max(), np.abs(b).max(), 1e-12)
    return float(np.abs(a - b).max() / denom)
