"""Backend selection for the piecewise-linear MGF kernel.

The compiled extension is used when importable; set ``CMRISK_PURE_PYTHON=1``
to force the NumPy implementation.
"""

from __future__ import annotations

import os

from . import _pwl_py

if os.environ.get("CMRISK_PURE_PYTHON"):
    _compiled = None
else:
    try:
        from . import _pwl_c as _compiled
    except ImportError:
        _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"
log_inner = _compiled.log_inner if _compiled is not None else _pwl_py.log_inner
log_inner_python = _pwl_py.log_inner
log_inner_compiled = _compiled.log_inner if _compiled is not None else None

__all__ = ["BACKEND", "log_inner", "log_inner_python", "log_inner_compiled"]
