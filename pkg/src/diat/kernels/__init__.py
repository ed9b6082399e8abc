"""Convolution kernel backend selection.

The compiled Cython extension is preferred when present; otherwise the
pure-numpy backend is used.  ``DIAT_BACKEND=numpy`` or
``DIAT_BACKEND=cython`` forces the choice (forcing an unavailable
backend raises at import).
"""

import os

from . import numpy_backend

_forced = os.environ.get("DIAT_BACKEND", "").strip().lower()

if _forced == "numpy":
    backend = numpy_backend
else:
    try:
        from . import conv_ext as _conv_ext
        backend = _conv_ext
    except ImportError:
        if _forced == "cython":
            raise ImportError(
                "DIAT_BACKEND=cython requested but the compiled extension "
                "is not available; rebuild the package or unset DIAT_BACKEND"
            )
        backend = numpy_backend

BACKEND_NAME = backend.NAME

conv2d_forward = backend.conv2d_forward
conv2d_input_grad = backend.conv2d_input_grad
conv2d_weight_grad = backend.conv2d_weight_grad
conv_transpose2d_forward = backend.conv_transpose2d_forward
conv_transpose2d_input_grad = backend.conv_transpose2d_input_grad
conv_transpose2d_weight_grad = backend.conv_transpose2d_weight_grad
