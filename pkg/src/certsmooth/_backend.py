"""Import-time selection between the compiled and pure-numpy kernels.

The compiled extension is preferred when present; ``CERTSMOOTH_PURE=1``
forces the pure backend (used by tests and the backend benchmark).  Both
backends are bit-identical by contract, so the choice is performance only.
"""

from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("CERTSMOOTH_PURE", "").strip() not in ("", "0"):
    kernels = _kernels_py
else:
    try:
        from . import _kernels as kernels  # type: ignore[no-redef]
    except ImportError:
        kernels = _kernels_py


def backend_name() -> str:
    """Name of the active kernel backend: "cython" or "python"."""
    return kernels.BACKEND_NAME
