"""Kernel backend selection.

The compiled extension is preferred when present; the pure-Python fallback
implements identical semantics.  Set PASALAB_BACKEND=pure (or =compiled) to
force a backend; forcing `compiled` raises if the extension is missing.
"""

import os

from . import _pure

_forced = os.environ.get("PASALAB_BACKEND", "").strip().lower()

if _forced == "pure":
    _impl = _pure
    BACKEND = "pure"
else:
    try:
        from . import _core as _impl  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:
        if _forced == "compiled":
            raise ImportError(
                "PASALAB_BACKEND=compiled but the pasalab._kernels._core extension "
                "is not built; install the package (pip install -e . --no-build-isolation)"
            )
        _impl = _pure
        BACKEND = "pure"

decompose = _impl.decompose
batch_cycle_stats = _impl.batch_cycle_stats
eval_chunk = _impl.eval_chunk

pure = _pure
