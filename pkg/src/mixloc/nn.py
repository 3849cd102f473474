"""Dense neural-network kernel: layers with analytic backward passes, the
mixer-style descriptor aggregator, the pose predictor and the projector.

Forward methods return (output, cache) and backward methods take (cache,
upstream gradient), accumulating parameter gradients into Param.grad; one
model can therefore run several forwards (query/positive/negative) before
its backwards are replayed. Storage is float32 by default with a float64
option used by the finite-difference gradient suite.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ShapeMismatch
from .rng import Stream, derive

CHECKPOINT_MAGIC = b"FMCK"
CHECKPOINT_VERSION = 1

_LN_EPS = 1e-5
_BN_EPS = 1e-5
_BN_MOMENTUM = 0.1
_NORM_EPS = 1e-12


class Param:
    __slots__ = ("value", "grad")

    def __init__(self, value: np.ndarray):
        self.value = value
        self.grad = np.zeros_like(value)

    def zero_grad(self):
        self.grad[...] = 0.0


def _dtype_of(name: str):
    return np.float64 if name == "f64" else np.float32


# ---------------------------------------------------------------------------
# Layers


class Linear:
    def __init__(self, n_in: int, n_out: int, stream: Stream, dtype):
        limit = np.sqrt(6.0 / n_in)
        self.W = Param(stream.uniform(-limit, limit, (n_in, n_out)).astype(dtype))
        self.b = Param(np.zeros(n_out, dtype=dtype))

    def forward(self, x):
        # flattened 2-D matmul keeps every shape on the BLAS path
        x2 = x.reshape(-1, x.shape[-1])
        y = (x2 @ self.W.value).reshape(*x.shape[:-1], -1)
        y += self.b.value
        return y, x

    def backward(self, cache, dy):
        x = cache
        x2 = x.reshape(-1, x.shape[-1])
        dy2 = np.ascontiguousarray(dy).reshape(-1, dy.shape[-1])
        self.W.grad += x2.T @ dy2
        self.b.grad += dy2.sum(axis=0)
        return (dy2 @ self.W.value.T).reshape(x.shape)

    def params(self, prefix):
        return [(f"{prefix}.W", self.W), (f"{prefix}.b", self.b)]


class LayerNorm:
    """Normalizes the last axis with learned scale/shift."""

    def __init__(self, dim: int, dtype):
        self.gamma = Param(np.ones(dim, dtype=dtype))
        self.beta = Param(np.zeros(dim, dtype=dtype))

    def forward(self, x):
        mu = x.mean(axis=-1, keepdims=True)
        xhat = x - mu
        var = np.einsum("...i,...i->...", xhat, xhat)[..., None] / x.shape[-1]
        inv = 1.0 / np.sqrt(var + _LN_EPS)
        xhat *= inv
        y = xhat * self.gamma.value
        y += self.beta.value
        return y, (xhat, inv)

    def backward(self, cache, dy):
        xhat, inv = cache
        flat = dy.reshape(-1, dy.shape[-1])
        xf = xhat.reshape(-1, xhat.shape[-1])
        self.gamma.grad += np.einsum("ij,ij->j", flat, xf)
        self.beta.grad += flat.sum(axis=0)
        dxhat = dy * self.gamma.value
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = np.einsum("...i,...i->...", dxhat, xhat)[..., None] / dy.shape[-1]
        dx = dxhat
        dx -= xhat * m2
        dx -= m1
        dx *= inv
        return dx

    def params(self, prefix):
        return [(f"{prefix}.gamma", self.gamma), (f"{prefix}.beta", self.beta)]


class BatchNorm:
    """Batch statistics in training mode, running stats (momentum 0.1) in
    eval mode. Degenerate zero-variance batches stay finite via eps."""

    def __init__(self, dim: int, dtype):
        self.gamma = Param(np.ones(dim, dtype=dtype))
        self.beta = Param(np.zeros(dim, dtype=dtype))
        self.running_mean = np.zeros(dim, dtype=dtype)
        self.running_var = np.ones(dim, dtype=dtype)

    def forward(self, x, training: bool):
        if training:
            mu = x.mean(axis=0)
            var = x.var(axis=0)
            self.running_mean = (1 - _BN_MOMENTUM) * self.running_mean + _BN_MOMENTUM * mu
            self.running_var = (1 - _BN_MOMENTUM) * self.running_var + _BN_MOMENTUM * var
        else:
            mu = self.running_mean
            var = self.running_var
        inv = 1.0 / np.sqrt(var + _BN_EPS)
        xhat = (x - mu) * inv
        y = self.gamma.value * xhat + self.beta.value
        return y, (xhat, inv, training)

    def backward(self, cache, dy):
        xhat, inv, training = cache
        self.gamma.grad += (dy * xhat).sum(axis=0)
        self.beta.grad += dy.sum(axis=0)
        dxhat = dy * self.gamma.value
        if not training:
            return dxhat * inv
        m1 = dxhat.mean(axis=0)
        m2 = (dxhat * xhat).mean(axis=0)
        return inv * (dxhat - m1 - xhat * m2)

    def params(self, prefix):
        return [(f"{prefix}.gamma", self.gamma), (f"{prefix}.beta", self.beta)]

    def state(self, prefix):
        return [
            (f"{prefix}.running_mean", self.running_mean),
            (f"{prefix}.running_var", self.running_var),
        ]


def gelu_forward(x):
    y, phi = kernels.gelu(x)
    return y, (x, phi)


def gelu_backward(cache, dy):
    x, phi = cache
    return kernels.gelu_grad(x, phi, dy)


def relu_forward(x):
    return np.maximum(x, 0.0), x


def relu_backward(cache, dy):
    return kernels.relu_grad(cache, dy)


def tanh_forward(x):
    y = np.tanh(x)
    return y, y


def tanh_backward(cache, dy):
    return dy * (1.0 - cache * cache)


# ---------------------------------------------------------------------------
# Model configuration


@dataclass(frozen=True)
class ModelConfig:
    m: int = 512
    d: int = 32
    l: int = 128
    hidden_point: int = 0  # 0 -> m // 2
    hidden_feature: int = 0  # 0 -> 2 * d
    n_mixer_layers: int = 1
    n_trunk: int = 6
    proj_hidden: int = 0  # 0 -> l
    proj_out: int = 0  # 0 -> l
    residual: bool = True
    dtype: str = "f32"

    @property
    def hp(self) -> int:
        return self.hidden_point or max(self.m // 2, 1)

    @property
    def hf(self) -> int:
        return self.hidden_feature or 2 * self.d

    @property
    def ph(self) -> int:
        return self.proj_hidden or self.l

    @property
    def po(self) -> int:
        return self.proj_out or self.l


PAPER_SCALE = ModelConfig(m=1024, d=32, l=1024)
DESK_SCALE = ModelConfig(m=512, d=32, l=128)
TINY_SCALE = ModelConfig(m=64, d=16, l=32)


# ---------------------------------------------------------------------------
# Blocks


class MixerBlock:
    """Point-mixing then feature-mixing MLP, each with layer norm over the
    descriptor axis, GELU between the two linears, and optional residual."""

    def __init__(self, m, d, hp, hf, residual, stream, dtype):
        self.residual = residual
        self.ln_point = LayerNorm(d, dtype)
        self.point1 = Linear(m, hp, stream, dtype)
        self.point2 = Linear(hp, m, stream, dtype)
        self.ln_feat = LayerNorm(d, dtype)
        self.feat1 = Linear(d, hf, stream, dtype)
        self.feat2 = Linear(hf, d, stream, dtype)

    def forward(self, x):
        t, c_ln1 = self.ln_point.forward(x)
        tT = np.ascontiguousarray(np.swapaxes(t, -1, -2))  # (B, d, M)
        h1, c_p1 = self.point1.forward(tT)
        h2, c_g1 = gelu_forward(h1)
        h3, c_p2 = self.point2.forward(h2)
        mix = np.swapaxes(h3, -1, -2)
        x1 = x + mix if self.residual else mix
        u, c_ln2 = self.ln_feat.forward(x1)
        v1, c_f1 = self.feat1.forward(u)
        v2, c_g2 = gelu_forward(v1)
        v3, c_f2 = self.feat2.forward(v2)
        x2 = x1 + v3 if self.residual else v3
        return x2, (c_ln1, c_p1, c_g1, c_p2, c_ln2, c_f1, c_g2, c_f2)

    def backward(self, cache, dx2):
        c_ln1, c_p1, c_g1, c_p2, c_ln2, c_f1, c_g2, c_f2 = cache
        dv3 = dx2
        dv2 = self.feat2.backward(c_f2, dv3)
        dv1 = gelu_backward(c_g2, dv2)
        du = self.feat1.backward(c_f1, dv1)
        dx1 = self.ln_feat.backward(c_ln2, du)
        if self.residual:
            dx1 = dx1 + dx2
        dh3 = np.ascontiguousarray(np.swapaxes(dx1, -1, -2))
        dh2 = self.point2.backward(c_p2, dh3)
        dh1 = gelu_backward(c_g1, dh2)
        dtT = self.point1.backward(c_p1, dh1)
        dt = np.swapaxes(dtT, -1, -2)
        dx = self.ln_point.backward(c_ln1, dt)
        if self.residual:
            dx = dx + dx1
        return dx

    def params(self, prefix):
        out = []
        out += self.ln_point.params(f"{prefix}.ln_point")
        out += self.point1.params(f"{prefix}.point1")
        out += self.point2.params(f"{prefix}.point2")
        out += self.ln_feat.params(f"{prefix}.ln_feat")
        out += self.feat1.params(f"{prefix}.feat1")
        out += self.feat2.params(f"{prefix}.feat2")
        return out


class MixerAggregator:
    """Mixer blocks, then a ReLU projection to dimension l, then global
    average pooling over the point axis."""

    def __init__(self, cfg: ModelConfig, stream: Stream, dtype):
        self.cfg = cfg
        self.blocks = [
            MixerBlock(cfg.m, cfg.d, cfg.hp, cfg.hf, cfg.residual, stream, dtype)
            for _ in range(cfg.n_mixer_layers)
        ]
        self.proj = Linear(cfg.d, cfg.l, stream, dtype)

    def forward(self, F):
        if F.ndim != 3 or F.shape[1] != self.cfg.m or F.shape[2] != self.cfg.d:
            raise ShapeMismatch(
                f"aggregator expects (B, {self.cfg.m}, {self.cfg.d}), got {F.shape}"
            )
        x = F
        caches = []
        for blk in self.blocks:
            x, c = blk.forward(x)
            caches.append(c)
        p1, c_proj = self.proj.forward(x)
        p2, c_relu = relu_forward(p1)
        g = p2.mean(axis=1)
        return g, (caches, c_proj, c_relu)

    def backward(self, cache, dg):
        caches, c_proj, c_relu = cache
        m = self.cfg.m
        dp2 = np.broadcast_to(dg[:, None, :] / m, (dg.shape[0], m, dg.shape[1]))
        dp1 = relu_backward(c_relu, dp2)
        dx = self.proj.backward(c_proj, dp1)
        for blk, c in zip(reversed(self.blocks), reversed(caches)):
            dx = blk.backward(c, dx)
        return dx

    def params(self, prefix="aggregator"):
        out = []
        for i, blk in enumerate(self.blocks):
            out += blk.params(f"{prefix}.block{i}")
        out += self.proj.params(f"{prefix}.proj")
        return out


class PosePredictor:
    """Trunk of {linear, batch norm, ReLU} blocks, then separate
    translation and log-quaternion heads (linear, ReLU, linear)."""

    def __init__(self, cfg: ModelConfig, stream: Stream, dtype):
        self.cfg = cfg
        self.trunk = []
        for _ in range(cfg.n_trunk):
            self.trunk.append((Linear(cfg.l, cfg.l, stream, dtype), BatchNorm(cfg.l, dtype)))
        h = max(cfg.l // 2, 1)
        self.t_head = (Linear(cfg.l, h, stream, dtype), Linear(h, 3, stream, dtype))
        self.q_head = (Linear(cfg.l, h, stream, dtype), Linear(h, 3, stream, dtype))

    def _head_forward(self, head, x):
        h1, c1 = head[0].forward(x)
        h2, c2 = relu_forward(h1)
        y, c3 = head[1].forward(h2)
        return y, (c1, c2, c3)

    def _head_backward(self, head, cache, dy):
        c1, c2, c3 = cache
        dh2 = head[1].backward(c3, dy)
        dh1 = relu_backward(c2, dh2)
        return head[0].backward(c1, dh1)

    def forward(self, g, training: bool):
        if g.ndim != 2 or g.shape[1] != self.cfg.l:
            raise ShapeMismatch(f"predictor expects (B, {self.cfg.l}), got {g.shape}")
        x = g
        caches = []
        for lin, bn in self.trunk:
            y1, c1 = lin.forward(x)
            y2, c2 = bn.forward(y1, training)
            x, c3 = relu_forward(y2)
            caches.append((c1, c2, c3))
        t, ct = self._head_forward(self.t_head, x)
        q, cq = self._head_forward(self.q_head, x)
        return t, q, (caches, ct, cq)

    def backward(self, cache, dt, dq):
        caches, ct, cq = cache
        dx = self._head_backward(self.t_head, ct, dt)
        dx = dx + self._head_backward(self.q_head, cq, dq)
        for (lin, bn), (c1, c2, c3) in zip(reversed(self.trunk), reversed(caches)):
            dy2 = relu_backward(c3, dx)
            dy1 = bn.backward(c2, dy2)
            dx = lin.backward(c1, dy1)
        return dx

    def params(self, prefix="predictor"):
        out = []
        for i, (lin, bn) in enumerate(self.trunk):
            out += lin.params(f"{prefix}.trunk{i}.linear")
            out += bn.params(f"{prefix}.trunk{i}.bn")
        out += self.t_head[0].params(f"{prefix}.t_head.0")
        out += self.t_head[1].params(f"{prefix}.t_head.1")
        out += self.q_head[0].params(f"{prefix}.q_head.0")
        out += self.q_head[1].params(f"{prefix}.q_head.1")
        return out

    def state(self, prefix="predictor"):
        out = []
        for i, (_, bn) in enumerate(self.trunk):
            out += bn.state(f"{prefix}.trunk{i}.bn")
        return out


class ProjectorMLP:
    """Two linear layers with ReLU, then row-wise L2 normalization.

    Rows with pre-normalization norm below 1e-12 are flagged (counted in
    cache) and handled by the eps in the denominator.
    """

    def __init__(self, cfg: ModelConfig, stream: Stream, dtype):
        self.cfg = cfg
        self.lin1 = Linear(cfg.l, cfg.ph, stream, dtype)
        self.lin2 = Linear(cfg.ph, cfg.po, stream, dtype)

    def forward(self, g):
        if g.ndim != 2 or g.shape[1] != self.cfg.l:
            raise ShapeMismatch(f"projector expects (B, {self.cfg.l}), got {g.shape}")
        h1, c1 = self.lin1.forward(g)
        h2, c2 = relu_forward(h1)
        z, c3 = self.lin2.forward(h2)
        n = np.sqrt((z * z).sum(axis=1, keepdims=True))
        y = z / (n + _NORM_EPS)
        zero_rows = int((n < _NORM_EPS).sum())
        return y, (c1, c2, c3, z, n, zero_rows)

    def backward(self, cache, dy):
        c1, c2, c3, z, n, _ = cache
        denom = n + _NORM_EPS
        zdotdy = (z * dy).sum(axis=1, keepdims=True)
        n_safe = np.maximum(n, _NORM_EPS)
        dz = dy / denom - z * (zdotdy / (denom * denom * n_safe))
        dh2 = self.lin2.backward(c3, dz)
        dh1 = relu_backward(c2, dh2)
        return self.lin1.backward(c1, dh1)

    def params(self, prefix="projector"):
        return self.lin1.params(f"{prefix}.lin1") + self.lin2.params(f"{prefix}.lin2")


class PoseRegressor:
    """Aggregator + predictor + projector plus the trainable scalars of the
    paired-logit regularizer; owns train/eval mode and checkpointing."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        dtype = _dtype_of(cfg.dtype)
        stream = Stream(derive(seed, 707))
        self.aggregator = MixerAggregator(cfg, stream, dtype)
        self.predictor = PosePredictor(cfg, stream, dtype)
        self.projector = ProjectorMLP(cfg, stream, dtype)
        self.siglip_tbar = Param(np.full(1, np.log(1.0 / 0.07), dtype=dtype))
        self.siglip_b = Param(np.zeros(1, dtype=dtype))
        self.training = True
        self.seed = seed

    def train_mode(self):
        self.training = True

    def eval_mode(self):
        self.training = False

    def named_params(self) -> dict[str, Param]:
        out = {}
        for name, p in (
            self.aggregator.params()
            + self.predictor.params()
            + self.projector.params()
            + [("siglip.tbar", self.siglip_tbar), ("siglip.b", self.siglip_b)]
        ):
            out[name] = p
        return out

    def named_state(self) -> list[tuple[str, np.ndarray]]:
        return self.predictor.state()

    def zero_grads(self):
        for p in self.named_params().values():
            p.zero_grad()

    def dtype(self):
        return _dtype_of(self.cfg.dtype)


# ---------------------------------------------------------------------------
# Checkpoint format


_CFG_FIELDS = [
    "m",
    "d",
    "l",
    "hidden_point",
    "hidden_feature",
    "n_mixer_layers",
    "n_trunk",
    "proj_hidden",
    "proj_out",
]


def save_checkpoint(path, model: PoseRegressor, meta: dict | None = None) -> None:
    """FMCK: magic, u32 version, length-prefixed key=value config text, then
    named little-endian f32 sections (parameters and batch-norm stats) in
    deterministic order."""
    cfg = model.cfg
    lines = [f"{k} = {getattr(cfg, k)}" for k in _CFG_FIELDS]
    lines.append(f"residual = {int(cfg.residual)}")
    lines.append(f"dtype = {cfg.dtype}")
    lines.append(f"seed = {model.seed}")
    for k, v in sorted((meta or {}).items()):
        lines.append(f"meta.{k} = {v}")
    blob = ("\n".join(lines) + "\n").encode()

    sections = [(name, p.value) for name, p in model.named_params().items()]
    sections += model.named_state()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        f.write(blob)
        f.write(struct.pack("<I", len(sections)))
        for name, arr in sections:
            nb = name.encode()
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.astype("<f4").tobytes())


def load_checkpoint(path) -> tuple[PoseRegressor, dict]:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        version, cfg_len = struct.unpack("<II", f.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        kv = {}
        for line in f.read(cfg_len).decode().splitlines():
            if "=" in line:
                k, v = line.split("=", 1)
                kv[k.strip()] = v.strip()
        cfg = ModelConfig(
            m=int(kv["m"]),
            d=int(kv["d"]),
            l=int(kv["l"]),
            hidden_point=int(kv["hidden_point"]),
            hidden_feature=int(kv["hidden_feature"]),
            n_mixer_layers=int(kv["n_mixer_layers"]),
            n_trunk=int(kv["n_trunk"]),
            proj_hidden=int(kv["proj_hidden"]),
            proj_out=int(kv["proj_out"]),
            residual=bool(int(kv["residual"])),
            dtype=kv["dtype"],
        )
        model = PoseRegressor(cfg, seed=int(kv.get("seed", 0)))
        meta = {k[5:]: v for k, v in kv.items() if k.startswith("meta.")}

        (n_sections,) = struct.unpack("<I", f.read(4))
        arrays = {}
        for _ in range(n_sections):
            (name_len,) = struct.unpack("<H", f.read(2))
            name = f.read(name_len).decode()
            (ndim,) = struct.unpack("<B", f.read(1))
            shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
            count = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(f.read(4 * count), dtype="<f4").reshape(shape)
            arrays[name] = data

    dtype = model.dtype()
    params = model.named_params()
    for name, p in params.items():
        if name not in arrays:
            raise ValueError(f"{path}: missing section {name}")
        p.value[...] = arrays[name].astype(dtype)
    for name, arr in model.named_state():
        arr[...] = arrays[name].astype(dtype)
    return model, meta
