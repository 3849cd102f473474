import numpy as np
import pytest

from conftest import assert_grad_close, numeric_grad
from mixloc.errors import DegenerateBatch
from mixloc.losses import (
    SIGLIP_TBAR_INIT,
    LossConfig,
    barlow_twins_loss,
    composite_loss,
    ntxent_loss,
    pose_loss,
    siglip_loss,
    triplet_loss,
)
from mixloc.rng import Stream


# --- pose loss


def test_pose_loss_zero_at_target():
    t = np.array([1.0, 2.0, 3.0])
    q = np.array([0.1, 0.0, -0.2])
    v, gt, gq = pose_loss(t, q, t, q, alpha=1.0)
    assert v == 0.0
    assert np.array_equal(gt, np.zeros(3))
    assert np.array_equal(gq, np.zeros(3))


def test_pose_loss_single_term():
    v, gt, gq = pose_loss(
        np.array([1.0, 0, 0]), np.zeros(3), np.zeros(3), np.zeros(3), alpha=1.0
    )
    assert v == 1.0
    assert np.array_equal(gt, [1.0, 0.0, 0.0])


def test_pose_loss_hand_case():
    t_pred = np.array([1.0, -2.0, 0.0])
    q_pred = np.array([0.5, 0.0, 0.0])
    v, gt, gq = pose_loss(t_pred, q_pred, np.zeros(3), np.zeros(3), alpha=2.0)
    assert v == 4.0
    assert np.array_equal(gt, [1.0, -1.0, 0.0])
    assert np.array_equal(gq, [2.0, 0.0, 0.0])


def test_pose_loss_batched_mean():
    t_pred = np.array([[1.0, 0, 0], [0, 0, 0]])
    v, gt, _ = pose_loss(t_pred, np.zeros((2, 3)), np.zeros((2, 3)), np.zeros((2, 3)), 1.0)
    assert v == 0.5
    assert np.array_equal(gt, [[0.5, 0, 0], [0, 0, 0]])


# --- barlow twins


def test_barlow_orthonormal_identity_case():
    lq = np.eye(2)
    v, _, _ = barlow_twins_loss(lq, lq, mu=0.005)
    assert abs(v) < 1e-12


def test_barlow_swapped_case():
    lq = np.eye(2)
    lp = np.array([[0.0, 1.0], [1.0, 0.0]])
    v, _, _ = barlow_twins_loss(lq, lp, mu=0.005)
    assert abs(v - 2.01) < 1e-9


def test_barlow_gradients():
    stream = Stream(90)
    lq = stream.normal((8, 16))
    lp = stream.normal((8, 16))
    v, dlq, dlp = barlow_twins_loss(lq, lp, mu=0.005)
    num_q = numeric_grad(lambda x: barlow_twins_loss(x, lp, 0.005)[0], lq)
    num_p = numeric_grad(lambda x: barlow_twins_loss(lq, x, 0.005)[0], lp)
    assert_grad_close(dlq, num_q)
    assert_grad_close(dlp, num_p)


def test_barlow_standardize_gradients():
    stream = Stream(91)
    lq = stream.normal((6, 5)) + 0.7
    lp = stream.normal((6, 5)) - 0.3
    v, dlq, dlp = barlow_twins_loss(lq, lp, mu=0.01, standardize=True)
    num_q = numeric_grad(lambda x: barlow_twins_loss(x, lp, 0.01, True)[0], lq)
    num_p = numeric_grad(lambda x: barlow_twins_loss(lq, x, 0.01, True)[0], lp)
    assert_grad_close(dlq, num_q)
    assert_grad_close(dlp, num_p)


def test_barlow_column_scale_invariance():
    stream = Stream(92)
    lq = stream.normal((10, 6))
    lp = stream.normal((10, 6))
    v0, _, _ = barlow_twins_loss(lq, lp, mu=0.005)
    sq = stream.uniform(0.2, 5.0, (6,))
    sp = stream.uniform(0.2, 5.0, (6,))
    v1, _, _ = barlow_twins_loss(lq * sq, lp * sp, mu=0.005)
    assert abs(v0 - v1) < 1e-6


def test_barlow_degenerate_batch():
    with pytest.raises(DegenerateBatch):
        barlow_twins_loss(np.ones((1, 4)), np.ones((1, 4)), 0.005)


# --- triplet


def test_triplet_satisfied_margin():
    lq = np.array([1.0, 0.0])
    lp = np.array([1.0, 0.0])
    ln = np.array([0.0, 1.0])
    v, dq, dp, dn = triplet_loss(lq, lp, ln, margin=0.05)
    assert v == 0.0
    for g in (dq, dp, dn):
        assert np.abs(g).max() == 0.0


def test_triplet_violated_case():
    lq = np.array([1.0, 0.0])
    lp = np.array([0.0, 1.0])
    ln = np.array([1.0, 0.0])
    v, _, _, _ = triplet_loss(lq, lp, ln, margin=0.05)
    assert abs(v - 2.05) < 1e-12


def test_triplet_gradients_active():
    stream = Stream(93)
    lq = stream.normal((5, 8))
    lp = lq + stream.normal((5, 8)) * 2.0  # far positives: active triplets
    ln = lq + stream.normal((5, 8)) * 0.01
    v, dq, dp, dn = triplet_loss(lq, lp, ln, margin=0.05)
    assert v > 0
    assert_grad_close(dq, numeric_grad(lambda x: triplet_loss(x, lp, ln, 0.05)[0], lq))
    assert_grad_close(dp, numeric_grad(lambda x: triplet_loss(lq, x, ln, 0.05)[0], lp))
    assert_grad_close(dn, numeric_grad(lambda x: triplet_loss(lq, lp, x, 0.05)[0], ln))


# --- ntxent


def test_ntxent_hand_case():
    lq = np.eye(2)
    v, _, _ = ntxent_loss(lq, lq, tau=1.0)
    expected = 2 * -np.log(np.e / (np.e + 1.0))
    assert abs(v - expected) < 1e-4
    assert abs(v - 0.6266) < 1e-3


def test_ntxent_small_tau_limit():
    lq = np.eye(2)
    v, _, _ = ntxent_loss(lq, lq, tau=0.01)
    assert v < 1e-8


def test_ntxent_gradients():
    stream = Stream(94)
    lq = stream.normal((6, 8))
    lq /= np.linalg.norm(lq, axis=1, keepdims=True)
    lp = stream.normal((6, 8))
    lp /= np.linalg.norm(lp, axis=1, keepdims=True)
    v, dlq, dlp = ntxent_loss(lq, lp, tau=0.07)
    assert_grad_close(dlq, numeric_grad(lambda x: ntxent_loss(x, lp, 0.07)[0], lq))
    assert_grad_close(dlp, numeric_grad(lambda x: ntxent_loss(lq, x, 0.07)[0], lp))


def test_ntxent_permutation_covariant():
    stream = Stream(95)
    lq = stream.normal((5, 4))
    lp = stream.normal((5, 4))
    v0, _, _ = ntxent_loss(lq, lp, tau=0.5)
    perm = np.array([2, 0, 4, 1, 3])
    v1, _, _ = ntxent_loss(lq[perm], lp[perm], tau=0.5)
    assert abs(v0 - v1) < 1e-10


def test_ntxent_exclude_positive_variant():
    stream = Stream(96)
    lq = stream.normal((4, 6))
    lp = stream.normal((4, 6))
    v_std, _, _ = ntxent_loss(lq, lp, tau=0.5)
    v_exc, dlq, _ = ntxent_loss(lq, lp, tau=0.5, exclude_positive=True)
    assert v_exc < v_std  # smaller denominator
    assert_grad_close(
        dlq, numeric_grad(lambda x: ntxent_loss(x, lp, 0.5, True)[0], lq)
    )


def test_ntxent_degenerate_batch():
    with pytest.raises(DegenerateBatch):
        ntxent_loss(np.ones((1, 4)), np.ones((1, 4)), 0.07)


# --- siglip


def test_siglip_hand_case():
    lq = np.array([[1.0, 0.0]])
    lp = np.array([[1.0, 0.0]])
    v, _, _, _, _ = siglip_loss(lq, lp, tbar=SIGLIP_TBAR_INIT, bias=0.0)
    t = 1.0 / 0.07
    expected = np.log1p(np.exp(-t))
    assert abs(v - expected) < 1e-12
    assert v < 1e-6


def test_siglip_nonnegative():
    stream = Stream(97)
    lq = stream.normal((5, 4))
    lp = stream.normal((5, 4))
    v, _, _, _, _ = siglip_loss(lq, lp, tbar=0.5, bias=0.3)
    assert v >= 0.0


def test_siglip_bias_direction():
    """With the published sign convention, growing b inflates the diagonal
    terms instead of relaxing them."""
    lq = np.eye(3)
    v_pos, _, _, _, _ = siglip_loss(lq, lq, tbar=SIGLIP_TBAR_INIT, bias=5.0)
    v_neg, _, _, _, _ = siglip_loss(lq, lq, tbar=SIGLIP_TBAR_INIT, bias=-5.0)
    assert v_pos > v_neg


def test_siglip_gradients_including_scalars():
    stream = Stream(98)
    lq = stream.normal((4, 6)) * 0.5
    lp = stream.normal((4, 6)) * 0.5
    tbar, bias = 1.2, -0.4
    v, dlq, dlp, dtbar, dbias = siglip_loss(lq, lp, tbar, bias)
    assert_grad_close(dlq, numeric_grad(lambda x: siglip_loss(x, lp, tbar, bias)[0], lq))
    assert_grad_close(dlp, numeric_grad(lambda x: siglip_loss(lq, x, tbar, bias)[0], lp))
    num_t = numeric_grad(lambda x: siglip_loss(lq, lp, float(x), bias)[0], np.array(tbar))
    num_b = numeric_grad(lambda x: siglip_loss(lq, lp, tbar, float(x))[0], np.array(bias))
    assert abs(dtbar - float(num_t)) <= 1e-4 * max(abs(dtbar), 1e-7)
    assert abs(dbias - float(num_b)) <= 1e-4 * max(abs(dbias), 1e-7)


def test_siglip_standard_sign_variant():
    lq = np.eye(3)
    v_pub, *_ = siglip_loss(lq, lq, SIGLIP_TBAR_INIT, 5.0, neg_sim_exponent=True)
    v_std, *_ = siglip_loss(lq, lq, SIGLIP_TBAR_INIT, 5.0, neg_sim_exponent=False)
    assert v_std != v_pub


# --- composite


def test_composite_none_equals_pose():
    stream = Stream(99)
    t_pred, q_pred = stream.normal((4, 3)), stream.normal((4, 3))
    t_gt, q_gt = stream.normal((4, 3)), stream.normal((4, 3))
    cfg = LossConfig(reg_kind="none")
    total, pose_v, reg_v, grads = composite_loss(cfg, t_pred, q_pred, t_gt, q_gt)
    expected, _, _ = pose_loss(t_pred, q_pred, t_gt, q_gt, cfg.alpha)
    assert total == expected
    assert reg_v == 0.0
    assert "zq" not in grads


def test_composite_weight_zero_matches_pose_gradients():
    stream = Stream(100)
    t_pred, q_pred = stream.normal((4, 3)), stream.normal((4, 3))
    t_gt, q_gt = stream.normal((4, 3)), stream.normal((4, 3))
    zq = stream.normal((4, 8))
    zp = stream.normal((4, 8))
    cfg = LossConfig(reg_kind="barlow", reg_weight=0.0)
    total, _, _, grads = composite_loss(cfg, t_pred, q_pred, t_gt, q_gt, zq, zp)
    v0, gt0, gq0 = pose_loss(t_pred, q_pred, t_gt, q_gt, cfg.alpha)
    assert abs(total - v0) < 1e-12
    assert np.abs(grads["t_pred"] - gt0).max() < 1e-12
    assert np.abs(grads["zq"]).max() == 0.0


def test_composite_reg_scaling():
    stream = Stream(101)
    args = [stream.normal((4, 3)) for _ in range(4)]
    zq, zp = stream.normal((4, 8)), stream.normal((4, 8))
    c1 = LossConfig(reg_kind="barlow", reg_weight=1.0)
    c2 = LossConfig(reg_kind="barlow", reg_weight=2.5)
    t1, _, r1, g1 = composite_loss(c1, *args, zq, zp)
    t2, _, r2, g2 = composite_loss(c2, *args, zq, zp)
    assert abs(r1 - r2) < 1e-12
    assert np.abs(g2["zq"] - 2.5 * g1["zq"]).max() < 1e-12


def test_composite_requires_embeddings():
    cfg = LossConfig(reg_kind="triplet")
    with pytest.raises(ValueError):
        composite_loss(cfg, np.zeros(3), np.zeros(3), np.zeros(3), np.zeros(3))


def test_loss_config_validation():
    with pytest.raises(ValueError):
        LossConfig(reg_kind="bogus")
    with pytest.raises(ValueError):
        LossConfig(alpha=-1.0)
