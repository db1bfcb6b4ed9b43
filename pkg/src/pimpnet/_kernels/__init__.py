"""Hot conv3d kernels with a compiled backend and a numpy fallback.

The compiled extension is used when it was built; set ``PIMPNET_BACKEND=python``
to force the fallback.
"""
import os

from . import conv3d_py

BACKEND = "python"
_impl = conv3d_py

if os.environ.get("PIMPNET_BACKEND", "").lower() != "python":
    try:
        from . import _conv3d as _compiled
    except ImportError:  # extension not built
        pass
    else:
        BACKEND = "cython"
        _impl = _compiled


def get_backend(name=None):
    """Return the kernel module for ``name`` ("cython" or "python"); default is the active one."""
    if name is None:
        return _impl
    if name == "python":
        return conv3d_py
    if name == "cython":
        from . import _conv3d

        return _conv3d
    raise ValueError(f"unknown backend {name!r}")


def conv3d_forward(x, w, b, stride, padding):
    return _impl.conv3d_forward(x, w, b, stride, padding)


def conv3d_backward_weight(x, g, k, stride, padding):
    return _impl.conv3d_backward_weight(x, g, k, stride, padding)


def conv3d_backward_input(w, g, D, H, W, stride, padding):
    return _impl.conv3d_backward_input(w, g, D, H, W, stride, padding)
