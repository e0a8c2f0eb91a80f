"""Convolution hot kernels with a compiled core and a numpy fallback.

The depthwise and stem convolutions dominate training time.  Both exist as a
Cython extension (``_fastconv``) and as vectorized numpy (``numpy_backend``)
with identical signatures; the compiled one is selected at import when built.
``ALWNN_KERNELS=numpy|compiled`` forces a choice, ``use_backend`` switches at
runtime (tests and the backend benchmark rely on this).

Pointwise convolutions are intentionally not here: they are plain matmuls and
BLAS already is the compiled fast path.
"""

from __future__ import annotations

import os

from . import numpy_backend

try:
    from . import _fastconv
except ImportError:
    _fastconv = None

_BACKENDS = {"numpy": numpy_backend}
if _fastconv is not None:
    _BACKENDS["compiled"] = _fastconv


def available_backends():
    return sorted(_BACKENDS)


def use_backend(name: str):
    """Select the kernel backend by name; returns the previous name."""
    global _active, _active_name
    if name not in _BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}; available: {available_backends()}")
    prev = _active_name
    _active = _BACKENDS[name]
    _active_name = name
    return prev


def backend():
    return _active


def backend_name() -> str:
    return _active_name


_forced = os.environ.get("ALWNN_KERNELS", "")
if _forced:
    _active_name = None
    use_backend(_forced)
else:
    _active_name = "compiled" if _fastconv is not None else "numpy"
    _active = _BACKENDS[_active_name]
