"""Kernel backend selection.

The compiled extension is preferred; ``SAACLT_BACKEND=python`` forces the
numpy implementation.
"""
import os

from . import _pykernels

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_requested = os.environ.get("SAACLT_BACKEND", "").strip().lower()
if _requested not in ("", "auto", "cython", "python"):
    raise ImportError(f"unknown SAACLT_BACKEND {_requested!r}")
if _requested == "cython" and _compiled is None:
    raise ImportError("SAACLT_BACKEND=cython but saaclt._kernels is not built")

if _compiled is not None and _requested != "python":
    kernels = _compiled
    BACKEND = "cython"
else:
    kernels = _pykernels
    BACKEND = "python"


def available() -> dict:
    out = {"python": _pykernels}
    if _compiled is not None:
        out["cython"] = _compiled
    return out
