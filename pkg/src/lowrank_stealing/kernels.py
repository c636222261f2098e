"""Hot-kernel dispatch: the compiled barrier kernel when built, numpy otherwise.

Set ``LOWRANK_STEALING_PURE=1`` to force the numpy path.
"""
from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("LOWRANK_STEALING_PURE"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = _kernels_py

BACKEND = "cython" if _impl is not _kernels_py else "python"

trunc_kl = _kernels_py.trunc_kl
barrier_eval = _impl.barrier_eval
