"""Hot numeric kernels: same-padded conv2d and 2x2 max pooling.

Two interchangeable backends exist — a Cython extension and a pure-numpy
fallback — and one is selected when this package is imported.  The
environment variable AMBCLAB_KERNELS controls the choice:

* ``auto`` (default): the compiled extension if it imports, else numpy;
* ``compiled``: require the extension, raise if it is missing;
* ``numpy``: force the fallback.

``benchmarks/bench_kernels.py`` compares the two backends head to head.
"""
import os

from . import _numpy

_requested = os.environ.get("AMBCLAB_KERNELS", "auto").lower()
if _requested not in ("auto", "compiled", "numpy"):
    raise ValueError(
        f"AMBCLAB_KERNELS must be auto, compiled or numpy, got {_requested!r}")

_impl = None
if _requested in ("auto", "compiled"):
    try:
        from . import _compiled as _impl
    except ImportError:
        if _requested == "compiled":
            raise
        _impl = None
if _impl is None:
    _impl = _numpy

BACKEND = "compiled" if _impl is not _numpy else "numpy"

conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
maxpool2_forward = _impl.maxpool2_forward
maxpool2_backward = _impl.maxpool2_backward


def get_backend(name):
    """Fetch a backend module by name (for benchmarks and cross-checks)."""
    if name == "numpy":
        return _numpy
    if name == "compiled":
        from . import _compiled
        return _compiled
    raise ValueError(f"unknown backend {name!r}")
