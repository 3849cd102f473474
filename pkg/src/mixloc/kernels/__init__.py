"""Hot-loop kernels with a compiled core and a numpy fallback.

The compiled extension (``mixloc.kernels._core``) is preferred when it
imports; otherwise the numpy reference implementation is used. Set
``MIXLOC_NO_EXT=1`` to force the fallback (used by the benchmark and the
backend-equivalence tests). ``BACKEND`` records which one is active.
"""

from __future__ import annotations

import os

import numpy as np

from . import reference

if os.environ.get("MIXLOC_NO_EXT"):
    _impl = reference
    BACKEND = "python"
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        _impl = reference
        BACKEND = "python"

fps_select = _impl.fps_select
neighbor_moments = _impl.neighbor_moments


def gelu(x):
    """Elementwise x * Phi(x) preserving shape; returns (y, Phi(x))."""
    flat = x.reshape(-1)
    y, phi = _impl.gelu(flat)
    return y.reshape(x.shape), phi.reshape(x.shape)


def gelu_grad(x, phi, dy):
    return _impl.gelu_grad(
        x.reshape(-1), phi.reshape(-1), np.ascontiguousarray(dy).reshape(-1)
    ).reshape(x.shape)


def relu_grad(x, dy):
    return _impl.relu_grad(
        x.reshape(-1), np.ascontiguousarray(dy).reshape(-1)
    ).reshape(x.shape)


__all__ = [
    "BACKEND",
    "fps_select",
    "neighbor_moments",
    "gelu",
    "gelu_grad",
    "relu_grad",
    "reference",
]
