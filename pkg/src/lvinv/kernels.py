"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the NumPy fallback.
Set ``LVINV_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py

if os.environ.get("LVINV_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _kernels_py

BACKEND = _impl.BACKEND
march_nonlinear = _impl.march_nonlinear
march_linear = _impl.march_linear

SCHEMES = {"backward_euler_imex": 0, "crank_nicolson_imex": 1}


def available_backends():
    out = {"python": _kernels_py}
    try:
        from . import _kernels
        out["cython"] = _kernels
    except ImportError:
        pass
    return out
