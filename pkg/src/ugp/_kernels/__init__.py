"""Convolution kernels with a compiled fast path and a NumPy fallback.

The compiled extension is picked up automatically when built. Set
``UGP_KERNELS=py`` to force the NumPy backend or ``UGP_KERNELS=c`` to fail
loudly if the extension is missing.
"""

import os

from . import numpy_backend

_choice = os.environ.get("UGP_KERNELS", "auto").lower()

if _choice == "py":
    _impl = numpy_backend
else:
    try:
        from . import _cconv as _impl  # type: ignore[no-redef]
    except ImportError:
        if _choice == "c":
            raise
        _impl = numpy_backend

conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward


def backend_name() -> str:
    """Which backend is active: "compiled" or "numpy"."""
    return "numpy" if _impl is numpy_backend else "compiled"
