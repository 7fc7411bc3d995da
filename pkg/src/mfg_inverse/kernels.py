"""Backend selection for the time-march kernel.

The compiled extension is used when it was built; otherwise the scipy-backed
fallback takes over. Setting ``MFG_INVERSE_PURE_PYTHON=1`` forces the
fallback, which the benchmark uses for its comparison.
"""

from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("MFG_INVERSE_PURE_PYTHON", "") not in ("", "0"):
    theta_march = _kernels_py.theta_march
    BACKEND = "python"
else:
    try:
        from ._kernels import theta_march
    except ImportError:
        theta_march = _kernels_py.theta_march
        BACKEND = "python"
    else:
        BACKEND = "cython"

__all__ = ["BACKEND", "theta_march"]
