"""Kernel backend selection.

The compiled ``_kernels`` extension is used when it imports; otherwise the
numpy implementation in ``_kernels_py`` is used. Set ``DCEPK_KERNELS=python``
to force the fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("DCEPK_KERNELS", "").lower() != "python":
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"

expconv = _impl.expconv
expconv_vjp = _impl.expconv_vjp
step_weights = _kernels_py.step_weights


def get_backend(name=None):
    """Return the kernel module for ``name`` ('python' or 'cython'); default is the active one."""
    if name is None:
        return _impl
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _kernels

        return _kernels
    raise ValueError(f"unknown kernel backend {name!r}")
