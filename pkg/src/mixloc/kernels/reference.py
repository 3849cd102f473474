"""Pure-numpy implementations of the per-scan hot kernels.

These are the fallback used when the compiled extension is unavailable and
the baseline the benchmark compares against. `fps_select` is bit-identical
to the compiled kernel (same squared-distance expression, same min-update,
same first-maximum argmax); `neighbor_moments` may differ from it in the
last bits because BLAS/einsum reductions do not sum in index order.
"""

from __future__ import annotations

import numpy as np


def fps_select(points: np.ndarray, m: int, first: int) -> np.ndarray:
    """Greedy farthest-point selection of min(m, n) distinct indices.

    Each pick maximizes the squared distance to the selected set; ties break
    to the lowest index (first-maximum argmax).
    """
    n = points.shape[0]
    m = min(m, n)
    out = np.empty(m, dtype=np.int64)
    out[0] = first
    d = points - points[first]
    best = d[:, 0] * d[:, 0]
    best += d[:, 1] * d[:, 1]
    best += d[:, 2] * d[:, 2]
    for i in range(1, m):
        nxt = int(np.argmax(best))
        out[i] = nxt
        d = points - points[nxt]
        cand = d[:, 0] * d[:, 0]
        cand += d[:, 1] * d[:, 1]
        cand += d[:, 2] * d[:, 2]
        np.minimum(best, cand, out=best)
    return out


def neighbor_moments(
    points: np.ndarray, queries: np.ndarray, radius: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """First and second moments of each query's neighborhood.

    For query index q, accumulates over all points j != q within `radius`:
    counts[k], s1[k] = sum(p_j - p_q), s2[k] = sum((p_j - p_q)(p_j - p_q)^T).
    """
    r2 = radius * radius
    q = points[queries]  # (M, 3)
    diff = points[None, :, :] - q[:, None, :]  # (M, N, 3)
    d2 = diff[:, :, 0] * diff[:, :, 0]
    d2 += diff[:, :, 1] * diff[:, :, 1]
    d2 += diff[:, :, 2] * diff[:, :, 2]
    mask = d2 <= r2
    mask[np.arange(len(queries)), queries] = False
    w = mask.astype(np.float64)
    counts = mask.sum(axis=1).astype(np.int64)
    s1 = np.einsum("mn,mnc->mc", w, diff)
    s2 = np.einsum("mn,mnc,mnd->mcd", w, diff, diff)
    return counts, s1, s2


_INV_SQRT2 = float(1.0 / np.sqrt(2.0))
_INV_SQRT2PI = float(1.0 / np.sqrt(2.0 * np.pi))


def gelu(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """y = x * Phi(x) on a flat array; returns (y, Phi(x))."""
    from scipy.special import erf

    phi = x * _INV_SQRT2
    erf(phi, out=phi)
    phi += 1.0
    phi *= 0.5
    return x * phi, phi


def gelu_grad(x: np.ndarray, phi: np.ndarray, dy: np.ndarray) -> np.ndarray:
    g = x * x
    g *= -0.5
    np.exp(g, out=g)
    g *= _INV_SQRT2PI
    g *= x
    g += phi
    g *= dy
    return g


def relu_grad(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    return dy * (x > 0)
