"""Hot-kernel selection: the compiled extension when built, else pure Python.

Set ``FARSIM_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"

if os.environ.get("FARSIM_PURE_PYTHON") != "1":
    try:
        from . import _kernels as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
else:
    _impl = _kernels_py

SetAssocLRU = _impl.SetAssocLRU
lru_fetch_count = _impl.lru_fetch_count
segment_sum_f32 = _impl.segment_sum_f32

__all__ = ["BACKEND", "SetAssocLRU", "lru_fetch_count", "segment_sum_f32"]
