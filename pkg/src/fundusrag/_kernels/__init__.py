"""Kernel backend selection.

The compiled extension is used when present; otherwise the pure-Python
kernels take over transparently.  Set ``FUNDUSRAG_NO_EXT=1`` to force the
pure backend (used by the benchmark and the backend-agreement tests).
"""

import os

from . import _fallback

if os.environ.get("FUNDUSRAG_NO_EXT") == "1":
    _impl = _fallback
    IMPLEMENTATION = "python"
else:
    try:
        from . import _ext as _impl  # type: ignore[attr-defined]

        IMPLEMENTATION = "compiled"
    except ImportError:
        _impl = _fallback
        IMPLEMENTATION = "python"

erode_u8 = _impl.erode_u8
dilate_u8 = _impl.dilate_u8
resample_rows = _impl.resample_rows
rotate_bilinear = _impl.rotate_bilinear
lcs_length = _impl.lcs_length


def available_backends():
    """Importable backends by name; 'compiled' is absent when not built."""
    backends = {"python": _fallback}
    try:
        from . import _ext  # type: ignore[attr-defined]

        backends["compiled"] = _ext
    except ImportError:
        pass
    return backends
