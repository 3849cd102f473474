"""Training objectives: L1 pose loss, cross-correlation (redundancy
reduction) regularizer, triplet margin, temperature-scaled softmax and
paired sigmoid contrastive losses, and the composite that mixes the pose
loss with one regularizer.

Every function returns (value, gradients...) with analytic gradients that
the test suite checks against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateBatch

_EPS = 1e-12

REG_KINDS = ("none", "barlow", "triplet", "ntxent", "siglip")

SIGLIP_TBAR_INIT = float(np.log(1.0 / 0.07))
SIGLIP_B_INIT = 0.0


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 1.0
    mu: float = 0.005
    margin: float = 0.05
    tau: float = 0.07
    reg_kind: str = "none"
    reg_weight: float = 1.0
    barlow_standardize: bool = False
    ntxent_exclude_positive: bool = False
    siglip_neg_sim_exponent: bool = True

    def __post_init__(self):
        if self.reg_kind not in REG_KINDS:
            raise ValueError(f"reg_kind must be one of {REG_KINDS}")
        for name in ("alpha", "mu", "margin", "tau", "reg_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def pose_loss(t_pred, q_pred, t_gt, q_gt, alpha: float):
    """L1 translation + alpha * L1 log-quaternion, averaged over the batch.

    Subgradient convention sign(0) = 0. Accepts (3,) vectors or (B, 3)
    batches.
    """
    squeeze = np.ndim(t_pred) == 1
    t_pred = np.atleast_2d(t_pred)
    q_pred = np.atleast_2d(q_pred)
    t_gt = np.atleast_2d(t_gt)
    q_gt = np.atleast_2d(q_gt)
    b = t_pred.shape[0]
    dt = t_pred - t_gt
    dq = q_pred - q_gt
    value = (np.abs(dt).sum() + alpha * np.abs(dq).sum()) / b
    grad_t = np.sign(dt) / b
    grad_q = alpha * np.sign(dq) / b
    if squeeze:
        grad_t, grad_q = grad_t[0], grad_q[0]
    return float(value), grad_t, grad_q


def _colnorm(x):
    return np.sqrt((x * x).sum(axis=0) + _EPS)


def barlow_twins_loss(lq, lp, mu: float, standardize: bool = False):
    """Cross-correlation redundancy-reduction loss.

    C[i, j] = sum_a lq[a, i] lp[a, j] / (||lq[:, i]|| ||lp[:, j]||), loss =
    sum_i (1 - C_ii)^2 + mu * sum_{i != j} C_ij^2. Columns are normalized by
    raw second moments over the batch (no mean-centering) unless
    `standardize` recenters them first.
    """
    lq = np.asarray(lq, dtype=np.float64)
    lp = np.asarray(lp, dtype=np.float64)
    if lq.ndim != 2 or lq.shape[0] < 2:
        raise DegenerateBatch("cross-correlation loss needs a batch of >= 2 rows")
    lq0, lp0 = lq, lp
    if standardize:
        lq = lq - lq.mean(axis=0)
        lp = lp - lp.mean(axis=0)

    nq = _colnorm(lq)
    npos = _colnorm(lp)
    c = (lq.T @ lp) / (nq[:, None] * npos[None, :])

    p = c.shape[0]
    diag = np.diag(c)
    off = c - np.diag(diag)
    value = ((1.0 - diag) ** 2).sum() + mu * (off * off).sum()

    g = 2.0 * mu * c
    g[np.arange(p), np.arange(p)] = -2.0 * (1.0 - diag)
    a = g / (nq[:, None] * npos[None, :])
    s_q = (g * c).sum(axis=1)  # per query column i
    s_p = (g * c).sum(axis=0)  # per positive column j
    dlq = lp @ a.T - lq * (s_q / (nq * nq))[None, :]
    dlp = lq @ a - lp * (s_p / (npos * npos))[None, :]
    if standardize:
        dlq = dlq - dlq.mean(axis=0)
        dlp = dlp - dlp.mean(axis=0)
    return float(value), dlq.astype(lq0.dtype), dlp.astype(lp0.dtype)


def triplet_loss(lq, lp, ln, margin: float):
    """max(||q-p||^2 - ||q-n||^2 + m, 0), meaned over the batch; inactive
    triplets contribute exactly zero gradient."""
    lq = np.atleast_2d(lq)
    lp = np.atleast_2d(lp)
    ln = np.atleast_2d(ln)
    b = lq.shape[0]
    dpos = lq - lp
    dneg = lq - ln
    raw = (dpos * dpos).sum(axis=1) - (dneg * dneg).sum(axis=1) + margin
    active = raw > 0
    value = np.where(active, raw, 0.0).sum() / b
    scale = (active.astype(lq.dtype) / b)[:, None]
    dlq = 2.0 * (dpos - dneg) * scale
    dlp = -2.0 * dpos * scale
    dln = 2.0 * dneg * scale
    return float(value), dlq, dlp, dln


def ntxent_loss(lq, lp, tau: float, exclude_positive: bool = False):
    """Temperature-scaled softmax contrastive loss, summed over the batch.

    Row i's positive is lp[i]; the denominator runs over all columns k
    (standard form). `exclude_positive` drops k = i from the denominator,
    which makes the loss unbounded below and exists only for comparison.
    """
    lq = np.asarray(lq)
    lp = np.asarray(lp)
    if lq.ndim != 2 or lq.shape[0] < 2:
        raise DegenerateBatch("softmax contrastive loss needs a batch of >= 2 rows")
    b = lq.shape[0]
    s = (lq @ lp.T) / tau
    if exclude_positive:
        s_den = s.copy()
        np.fill_diagonal(s_den, -np.inf)
    else:
        s_den = s
    smax = s_den.max(axis=1, keepdims=True)
    lse = smax[:, 0] + np.log(np.exp(s_den - smax).sum(axis=1))
    diag = s[np.arange(b), np.arange(b)]
    value = (lse - diag).sum()

    softmax = np.exp(s_den - lse[:, None])
    ds = softmax
    ds[np.arange(b), np.arange(b)] -= 1.0
    ds = ds / tau
    dlq = ds @ lp
    dlp = ds.T @ lq
    return float(value), dlq.astype(lq.dtype), dlp.astype(lp.dtype)


def _sigmoid(x):
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def _softplus(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def siglip_loss(lq, lp, tbar: float, bias: float, neg_sim_exponent: bool = True):
    """Pairwise sigmoid contrastive loss with trainable log-temperature and
    bias.

    With the default convention the logit is z_ij * (-t * <lq_i, lp_j> + b),
    z = +1 on the diagonal and -1 off it, t = exp(tbar); the loss is the
    mean over rows of the summed softplus of those logits (so it is >= 0 and
    vanishes only when every pair is classified with infinite margin).
    `neg_sim_exponent=False` flips to z_ij * (t * <.,.> + b), which reverses
    the role of the bias.
    """
    lq = np.asarray(lq)
    lp = np.asarray(lp)
    if lq.ndim != 2 or lq.shape[0] < 1:
        raise DegenerateBatch("paired sigmoid loss needs a nonempty batch")
    b_size = lq.shape[0]
    t = float(np.exp(tbar))
    sim = lq @ lp.T
    z = -np.ones((b_size, b_size), dtype=np.float64)
    np.fill_diagonal(z, 1.0)
    sim_sign = -1.0 if neg_sim_exponent else 1.0
    x = z * (sim_sign * t * sim + bias)
    value = _softplus(x).sum() / b_size

    sig = _sigmoid(x)
    dx = sig / b_size
    dsim = dx * z * (sim_sign * t)
    dlq = dsim @ lp
    dlp = dsim.T @ lq
    dbias = float((dx * z).sum())
    dtbar = float((dx * z * sim_sign * sim).sum() * t)
    return float(value), dlq.astype(lq.dtype), dlp.astype(lp.dtype), dtbar, dbias


def regularizer_loss(cfg: LossConfig, zq, zp, zn, tbar: float, bias: float):
    """Dispatch on cfg.reg_kind; returns (value, dzq, dzp, dzn, dtbar, db)."""
    zeros = lambda a: np.zeros_like(a)
    if cfg.reg_kind == "barlow":
        v, dq, dp = barlow_twins_loss(zq, zp, cfg.mu, cfg.barlow_standardize)
        return v, dq, dp, zeros(zn), 0.0, 0.0
    if cfg.reg_kind == "triplet":
        v, dq, dp, dn = triplet_loss(zq, zp, zn, cfg.margin)
        return v, dq, dp, dn, 0.0, 0.0
    if cfg.reg_kind == "ntxent":
        v, dq, dp = ntxent_loss(zq, zp, cfg.tau, cfg.ntxent_exclude_positive)
        return v, dq, dp, zeros(zn), 0.0, 0.0
    if cfg.reg_kind == "siglip":
        v, dq, dp, dtbar, db = siglip_loss(zq, zp, tbar, bias, cfg.siglip_neg_sim_exponent)
        return v, dq, dp, zeros(zn), dtbar, db
    raise ValueError(f"unknown reg_kind {cfg.reg_kind!r}")


def composite_loss(
    cfg: LossConfig,
    t_pred,
    q_pred,
    t_gt,
    q_gt,
    zq=None,
    zp=None,
    zn=None,
    tbar: float = SIGLIP_TBAR_INIT,
    bias: float = SIGLIP_B_INIT,
):
    """L = L_pose + reg_weight * L_reg with gradients for every input.

    Returns (total, pose_value, reg_value, grads) where grads maps input
    names to arrays; embedding gradients are pre-scaled by reg_weight so
    callers can feed them straight into the projector backward pass.
    """
    pose_v, dt, dq = pose_loss(t_pred, q_pred, t_gt, q_gt, cfg.alpha)
    grads = {"t_pred": dt, "q_pred": dq, "tbar": 0.0, "bias": 0.0}
    reg_v = 0.0
    if cfg.reg_kind != "none":
        if zq is None or zp is None:
            raise ValueError(f"reg_kind={cfg.reg_kind} needs projected embeddings")
        if zn is None:
            zn = np.zeros_like(zq)
        reg_v, dzq, dzp, dzn, dtbar, db = regularizer_loss(cfg, zq, zp, zn, tbar, bias)
        w = cfg.reg_weight
        grads["zq"] = w * dzq
        grads["zp"] = w * dzp
        grads["zn"] = w * dzn
        grads["tbar"] = w * dtbar
        grads["bias"] = w * db
    total = pose_v + cfg.reg_weight * reg_v
    return total, pose_v, reg_v, grads
