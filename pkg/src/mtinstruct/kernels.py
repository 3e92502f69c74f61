"""Hot-kernel dispatch: the compiled ``_core`` extension when it imports,
otherwise the pure Python/numpy fallback.

Set ``MTINSTRUCT_PURE=1`` to force the fallback.
"""

import os

from . import _pure

if os.environ.get("MTINSTRUCT_PURE", "").lower() in ("1", "true", "yes"):
    _impl = _pure
else:
    try:
        from . import _core as _impl
    except ImportError:
        _impl = _pure

BACKEND = "cython" if _impl is not _pure else "python"

alias_draws = _impl.alias_draws
assign_records = _impl.assign_records
iou_pairs = _impl.iou_pairs
bilinear_resize = _impl.bilinear_resize


def implementations():
    """Every available backend, by name (for tests and benchmarks)."""
    impls = {"python": _pure}
    try:
        from . import _core
        impls["cython"] = _core
    except ImportError:
        pass
    return impls
