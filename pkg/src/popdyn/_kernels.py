"""Select the kernel backend at import time.

The compiled ``_core`` extension is used when it imports; set
``POPDYN_PURE=1`` to force the NumPy fallback.
"""
import logging
import os

from . import _pure

log = logging.getLogger(__name__)

_core = None
if os.environ.get("POPDYN_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _core
    except ImportError:  # extension not built
        log.debug("compiled kernels unavailable, using NumPy fallback")

_impl = _core if _core is not None else _pure
BACKEND = "cython" if _core is not None else "numpy"

assign_nearest = _impl.assign_nearest
mean_shift_flat = _impl.mean_shift_flat
best_split = _impl.best_split
tree_apply = _impl.tree_apply
smo_solve = _impl.smo_solve


def backends():
    """Available implementations keyed by name (for parity tests and benchmarks)."""
    out = {"numpy": _pure}
    if _core is not None:
        out["cython"] = _core
    return out
