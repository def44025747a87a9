"""Kernel backend selection: numba @njit kernels or the pure-numpy fallback.

The default comes from the env var CFCAM_BACKEND ("numba" or "numpy",
default "numba"). When numba is requested but cannot be imported, the
numpy path is used and a warning is logged. `use_backend` switches at
runtime (used by tests and the benchmark).
"""

import logging
import os

from . import _kernels_numpy

log = logging.getLogger("cfcam")

_impl = None
_name = None


def use_backend(name):
    """Activate a kernel backend by name ("numba" or "numpy")."""
    global _impl, _name
    if name == "numpy":
        _impl, _name = _kernels_numpy, "numpy"
    elif name == "numba":
        try:
            from . import _kernels_numba
        except ImportError as exc:
            log.warning("numba backend unavailable (%s); using numpy", exc)
            _impl, _name = _kernels_numpy, "numpy"
        else:
            _impl, _name = _kernels_numba, "numba"
    else:
        raise ValueError(f"unknown backend {name!r} (expected 'numba' or 'numpy')")
    return _name


def active_backend():
    return _name


use_backend(os.environ.get("CFCAM_BACKEND", "numba"))


def gaussian_filter_axis0(x, kernel):
    return _impl.gaussian_filter_axis0(x, kernel)


def pairwise_euclidean(x):
    return _impl.pairwise_euclidean(x)


def dbscan_labels(dist, eps, minpts):
    return _impl.dbscan_labels(dist, eps, minpts)


def bilinear_resize(a, out_h, out_w):
    return _impl.bilinear_resize(a, out_h, out_w)


def conv2d(x, w, b, sh, sw, pt, pl, pb, pr):
    return _impl.conv2d(x, w, b, sh, sw, pt, pl, pb, pr)


def maxpool2d(x, kh, kw, sh, sw, pt, pl, pb, pr):
    return _impl.maxpool2d(x, kh, kw, sh, sw, pt, pl, pb, pr)
