import numpy as np
import pytest


def numeric_grad(f, x, h=1e-5):
    """Central-difference gradient of scalar f w.r.t. array x (float64)."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2 * h)
    return g


def assert_grad_close(analytic, numeric, rel_tol=1e-4, floor=1e-7):
    """Elementwise relative error vs central differences.

    Entries where both gradients sit below the finite-difference noise floor
    are compared absolutely instead.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    assert a.shape == n.shape
    scale = np.maximum(np.abs(a), np.abs(n))
    big = scale > floor
    if big.any():
        rel = np.abs(a[big] - n[big]) / scale[big]
        assert rel.max() <= rel_tol, f"max rel err {rel.max():.3e}"
    small = ~big
    if small.any():
        assert np.abs(a[small] - n[small]).max() <= floor


@pytest.fixture
def tiny_dataset(tmp_path):
    """40-scan dataset small enough for per-test pipelines."""
    from mixloc.synth import DatasetSpec, SensorCfg, generate_dataset

    spec = DatasetSpec(
        seed=11,
        extent=24.0,
        n_landmarks=18,
        train_poses=40,
        test_poses=8,
        sensor=SensorCfg(points=1500),
    )
    manifest = generate_dataset(tmp_path / "ds", spec)
    return manifest
