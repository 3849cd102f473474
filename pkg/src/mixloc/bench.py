"""Benchmark of the compiled point kernels against the numpy fallback."""

from __future__ import annotations

import time

import numpy as np

from . import rng
from .kernels import reference

try:
    from .kernels import _core
except ImportError:
    _core = None


def _random_cloud(n: int, seed: int) -> np.ndarray:
    stream = rng.Stream(rng.derive(seed, 606))
    pts = stream.uniform(-25.0, 25.0, (n, 3))
    pts[:, 2] = stream.uniform(0.0, 10.0, (n,))
    return np.ascontiguousarray(pts)


def run_benchmark(
    n: int = 3000, m: int = 512, radius: float = 2.0, repeats: int = 3, seed: int = 0
) -> list[dict]:
    """Times fps_select and neighbor_moments per backend; checks agreement."""
    pts = _random_cloud(n, seed)
    backends = [("python", reference)]
    if _core is not None:
        backends.append(("compiled", _core))

    rows = []
    sel_by_backend = {}
    for name, impl in backends:
        best_fps = np.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            sel = impl.fps_select(pts, m, 0)
            best_fps = min(best_fps, time.perf_counter() - t0)
        sel_by_backend[name] = sel
        best_nm = np.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            impl.neighbor_moments(pts, sel, radius)
            best_nm = min(best_nm, time.perf_counter() - t0)
        rows.append({"backend": name, "fps_s": best_fps, "moments_s": best_nm})

    if len(sel_by_backend) == 2 and not np.array_equal(
        sel_by_backend["python"], sel_by_backend["compiled"]
    ):
        raise AssertionError("backends disagree on farthest point selection")
    return rows


def format_table(rows: list[dict], n: int, m: int) -> str:
    lines = [
        f"point kernels, N={n}, M={m} (best of repeats)",
        f"{'backend':<10} {'fps_select':>12} {'neighbor_moments':>18}",
    ]
    for r in rows:
        lines.append(f"{r['backend']:<10} {r['fps_s'] * 1e3:>10.2f}ms {r['moments_s'] * 1e3:>16.2f}ms")
    if len(rows) == 2:
        fast, slow = rows[1], rows[0]
        lines.append(
            f"speedup: fps {slow['fps_s'] / fast['fps_s']:.1f}x, "
            f"moments {slow['moments_s'] / fast['moments_s']:.1f}x"
        )
    return "\n".join(lines)
