"""Select the compiled kernels when available, else the pure-Python ones.

Set ``ECECHAIN_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _fallback

BACKEND = "python"
pack_ece_batch = _fallback.pack_ece_batch
count_ranks = _fallback.count_ranks

if os.environ.get("ECECHAIN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels
    except ImportError:
        pass
    else:
        BACKEND = "cython"
        pack_ece_batch = _kernels.pack_ece_batch
        count_ranks = _kernels.count_ranks

__all__ = ["BACKEND", "pack_ece_batch", "count_ranks"]
