"""Hot-loop kernels with a compiled backend and a pure-Python fallback.

The compiled module is used when it imports cleanly; setting the
environment variable ``VOLLEYPG_PURE_PYTHON=1`` forces the fallback.
"""
import os

from . import _pure

BACKEND = "python"
_impl = _pure

if not os.environ.get("VOLLEYPG_PURE_PYTHON"):
    try:
        from . import _core as _impl  # noqa: F811
        BACKEND = "compiled"
    except ImportError:
        _impl = _pure

mc_advance = _impl.mc_advance
crossprod = _impl.crossprod

DONE, HITS, CUR, STEPS, TARGET, MAX_STEPS, LOST = range(7)

__all__ = ["BACKEND", "mc_advance", "crossprod", "_pure"]
