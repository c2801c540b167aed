"""Backend selection for the conv1d hot kernels.

The compiled extension is used when it was built; otherwise the numpy
fallback. Setting ``OPTENSOR_PURE_PYTHON=1`` forces the fallback.
"""
import os

from . import _pykernels

try:
    if os.environ.get("OPTENSOR_PURE_PYTHON") == "1":
        raise ImportError("compiled kernels disabled by OPTENSOR_PURE_PYTHON")
    from . import _ckernels
except ImportError:
    _ckernels = None

BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    BACKENDS["cython"] = _ckernels

BACKEND = "cython" if _ckernels is not None else "python"
_impl = BACKENDS[BACKEND]


def use_backend(name):
    """Switch the active kernel backend; returns the previous name."""
    global BACKEND, _impl
    if name not in BACKENDS:
        raise ValueError(f"unknown or unavailable kernel backend {name!r}")
    prev = BACKEND
    BACKEND, _impl = name, BACKENDS[name]
    return prev


def conv1d_forward(x, w, b, dilation, pad_left, pad_right):
    return _impl.conv1d_forward(x, w, b, dilation, pad_left, pad_right)


def conv1d_backward(g, x, w, dilation, pad_left, pad_right, need_x=True, need_w=True):
    return _impl.conv1d_backward(g, x, w, dilation, pad_left, pad_right, need_x, need_w)
