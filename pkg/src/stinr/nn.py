"""Minimal neural substrate: dense/graph-conv layers, sine/relu/tanh
activations, random Fourier features, reverse-mode gradients and Adam.

The layer stack is fixed-topology (a list of LayerSpec), so backprop is
written out explicitly instead of through a general tape. Training runs in
float32 by default; gradient verification runs in float64.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError, NumericalError

KINDS = ("dense", "gcn")
ACTIVATIONS = ("relu", "sine", "tanh", "identity")
SCHEMES = ("siren", "ffn", "he")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

FOURIER_SIGMA = 10.0

# ReLU output heads start with a small positive bias so the optimizer sees
# gradients everywhere instead of freezing channels at dead-zero; where a
# head ends up (exact zeros vs a conditional-mean glow) is then decided by
# the training loss, not by initialization accidents.
RELU_HEAD_BIAS = 0.1


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_dim: int
    out_dim: int
    activation: str = "identity"
    omega: float = 30.0  # sine only

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError("layer dims must be positive")
        if self.activation == "sine" and not self.omega > 0:
            raise ValueError("sine activation requires omega > 0")


@dataclass
class ParamSet:
    """Per-layer weights/biases plus an optional frozen Fourier matrix."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    fourier_b: np.ndarray | None = None

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def n_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    @property
    def dtype(self):
        return self.weights[0].dtype

    def copy(self) -> "ParamSet":
        return ParamSet(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            None if self.fourier_b is None else self.fourier_b.copy(),
        )

    def astype(self, dtype) -> "ParamSet":
        return ParamSet(
            [w.astype(dtype) for w in self.weights],
            [b.astype(dtype) for b in self.biases],
            None if self.fourier_b is None else self.fourier_b.astype(dtype),
        )

    def slice_layers(self, lo: int, hi: int) -> "ParamSet":
        """Copy of a contiguous layer range (fourier matrix not carried)."""
        return ParamSet(
            [w.copy() for w in self.weights[lo:hi]],
            [b.copy() for b in self.biases[lo:hi]],
        )

    def to_flat(self) -> np.ndarray:
        parts = [w.ravel() for w in self.weights] + [b.ravel() for b in self.biases]
        return np.concatenate(parts)

    def from_flat(self, vec: np.ndarray) -> "ParamSet":
        out = self.copy()
        pos = 0
        for arrs in (out.weights, out.biases):
            for i, a in enumerate(arrs):
                arrs[i] = vec[pos : pos + a.size].reshape(a.shape).astype(a.dtype)
                pos += a.size
        return out


@dataclass
class Grads:
    weights: list[np.ndarray]
    biases: list[np.ndarray]


@dataclass
class AdamState:
    m_w: list[np.ndarray]
    v_w: list[np.ndarray]
    m_b: list[np.ndarray]
    v_b: list[np.ndarray]
    step: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS


def init_adam(params: ParamSet, beta1=ADAM_BETA1, beta2=ADAM_BETA2, eps=ADAM_EPS) -> AdamState:
    return AdamState(
        m_w=[np.zeros_like(w) for w in params.weights],
        v_w=[np.zeros_like(w) for w in params.weights],
        m_b=[np.zeros_like(b) for b in params.biases],
        v_b=[np.zeros_like(b) for b in params.biases],
        step=0,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
    )


# ---------------------------------------------------------------------------
# initialization


def init_params(
    specs,
    scheme: str,
    seed: int,
    dtype=np.float32,
    fourier_in: int = 2,
    fourier_sigma: float = FOURIER_SIGMA,
) -> ParamSet:
    """Seed-deterministic initialization.

    siren: first layer U(-1/in, 1/in), later layers U(-sqrt(6/in)/omega, +).
    ffn:   frozen Fourier matrix B ~ N(0, sigma^2) of shape (fourier_in, m)
           with m = specs[0].in_dim / 2, dense layers He-initialized.
    he:    W ~ N(0, 2/in), biases zero.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown init scheme {scheme!r}")
    rng = np.random.default_rng(seed)
    fourier_b = None
    if scheme == "ffn":
        if specs[0].in_dim % 2:
            raise ValueError("ffn scheme needs an even first-layer input (sin|cos blocks)")
        m = specs[0].in_dim // 2
        fourier_b = rng.normal(0.0, fourier_sigma, size=(fourier_in, m)).astype(dtype)
    weights, biases = [], []
    for li, spec in enumerate(specs):
        if scheme == "siren":
            if li == 0:
                bound = 1.0 / spec.in_dim
            else:
                bound = np.sqrt(6.0 / spec.in_dim) / spec.omega
            w = rng.uniform(-bound, bound, size=(spec.in_dim, spec.out_dim))
        else:
            w = rng.normal(0.0, np.sqrt(2.0 / spec.in_dim), size=(spec.in_dim, spec.out_dim))
        weights.append(w.astype(dtype))
        bias = np.zeros(spec.out_dim, dtype=dtype)
        if li == len(specs) - 1 and spec.activation == "relu":
            bias += RELU_HEAD_BIAS
        biases.append(bias)
    return ParamSet(weights, biases, fourier_b)


# ---------------------------------------------------------------------------
# forward / backward


def fourier_map(coords: np.ndarray, B: np.ndarray) -> np.ndarray:
    """[sin(2*pi*X@B), cos(2*pi*X@B)] feature expansion; B stays frozen."""
    coords = np.asarray(coords)
    if coords.ndim != 2 or coords.shape[1] != B.shape[0]:
        raise DataError(f"coords {coords.shape} incompatible with B {B.shape}")
    proj = (2.0 * np.pi) * (coords @ B)
    return np.concatenate([np.sin(proj), np.cos(proj)], axis=1)


def _act(u: np.ndarray, spec: LayerSpec) -> np.ndarray:
    if spec.activation == "relu":
        return np.maximum(u, 0.0)
    if spec.activation == "sine":
        return np.sin(spec.omega * u)
    if spec.activation == "tanh":
        return np.tanh(u)
    return u


def _act_grad(u: np.ndarray, h: np.ndarray, spec: LayerSpec) -> np.ndarray:
    """d act/d u given pre-activation u and output h = act(u)."""
    if spec.activation == "relu":
        return (u > 0).astype(u.dtype)
    if spec.activation == "sine":
        return spec.omega * np.cos(spec.omega * u)
    if spec.activation == "tanh":
        return 1.0 - h * h
    return np.ones_like(u)


def _adj_for(graph, dtype):
    adj = graph.norm_adj
    if adj.dtype != dtype:
        adj = adj.astype(dtype)
    return adj


def _forward_full(params: ParamSet, specs, X: np.ndarray, graph=None):
    """Returns (activations incl. input, pre-activations, pre-weight inputs)."""
    acts = [X]
    pres, pins = [], []
    H = X
    for spec, W, b in zip(specs, params.weights, params.biases):
        if H.shape[1] != spec.in_dim:
            raise DataError(f"layer expects {spec.in_dim} features, got {H.shape[1]}")
        if spec.kind == "gcn":
            if graph is None:
                raise DataError("gcn layer requires a CellGraph")
            P = _adj_for(graph, H.dtype) @ H
        else:
            P = H
        U = P @ W + b
        H = _act(U, spec)
        pins.append(P)
        pres.append(U)
        acts.append(H)
    return acts, pres, pins


def forward(params: ParamSet, specs, X: np.ndarray, graph=None) -> list[np.ndarray]:
    """All layer activations, input first, final output last."""
    return _forward_full(params, specs, X, graph)[0]


class MseTail:
    """Mean squared error over all elements of the final output."""

    def __init__(self, target: np.ndarray):
        self.target = target

    def value(self, Y: np.ndarray) -> float:
        d = Y - self.target
        return float(np.mean(d.astype(np.float64) ** 2))

    def grad(self, Y: np.ndarray) -> np.ndarray:
        return ((2.0 / Y.size) * (Y - self.target)).astype(Y.dtype)


def gradients(params: ParamSet, specs, X, graph, loss_tail) -> tuple[float, Grads]:
    """Reverse-mode gradients of loss_tail over the stack's output.

    The Fourier matrix is frozen by contract and receives no gradient.
    """
    acts, pres, pins = _forward_full(params, specs, X, graph)
    Y = acts[-1]
    loss = loss_tail.value(Y)
    if not np.isfinite(loss):
        raise NumericalError(f"non-finite loss value {loss}")
    dH = loss_tail.grad(Y)
    n_layers = len(specs)
    g_w = [None] * n_layers
    g_b = [None] * n_layers
    for li in range(n_layers - 1, -1, -1):
        spec = specs[li]
        dU = dH if spec.activation == "identity" else dH * _act_grad(pres[li], acts[li + 1], spec)
        g_w[li] = pins[li].T @ dU
        g_b[li] = dU.sum(axis=0)
        if not np.isfinite(g_w[li]).all():
            raise NumericalError(f"non-finite gradient at layer {li}")
        if li > 0:
            dP = dU @ params.weights[li].T
            if spec.kind == "gcn":
                dP = _adj_for(graph, dP.dtype).T @ dP
            dH = dP
    return loss, Grads(g_w, g_b)


def adam_step(params: ParamSet, grads: Grads, state: AdamState, lr: float) -> tuple[ParamSet, AdamState]:
    """One bias-corrected Adam update; returns fresh params and state."""
    t = state.step + 1
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t

    def upd(p, g, m, v):
        m2 = state.beta1 * m + (1.0 - state.beta1) * g
        v2 = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        p2 = p - lr * (m2 / c1) / (np.sqrt(v2 / c2) + state.eps)
        return p2.astype(p.dtype), m2, v2

    new_w, new_mw, new_vw = [], [], []
    for p, g, m, v in zip(params.weights, grads.weights, state.m_w, state.v_w):
        p2, m2, v2 = upd(p, g, m, v)
        new_w.append(p2), new_mw.append(m2), new_vw.append(v2)
    new_b, new_mb, new_vb = [], [], []
    for p, g, m, v in zip(params.biases, grads.biases, state.m_b, state.v_b):
        p2, m2, v2 = upd(p, g, m, v)
        new_b.append(p2), new_mb.append(m2), new_vb.append(v2)
    new_params = ParamSet(new_w, new_b, params.fourier_b)
    new_state = AdamState(new_mw, new_vw, new_mb, new_vb, t, state.beta1, state.beta2, state.eps)
    return new_params, new_state


def fit(params: ParamSet, specs, X, graph, loss_tail, epochs: int, lr: float) -> tuple[ParamSet, list[float]]:
    """Full-batch Adam loop; returns trained params and per-epoch loss trace."""
    state = init_adam(params)
    trace = []
    for epoch in range(epochs):
        try:
            loss, grads = gradients(params, specs, X, graph, loss_tail)
        except NumericalError as e:
            raise NumericalError(f"epoch {epoch}: {e}") from None
        trace.append(loss)
        params, state = adam_step(params, grads, state, lr)
    return params, trace


# ---------------------------------------------------------------------------
# finite-difference verification


@dataclass
class FiniteDiffReport:
    passed: bool
    max_rel_err: float
    per_tensor: dict = field(default_factory=dict)

    def __str__(self):
        status = "pass" if self.passed else "FAIL"
        return f"finite-diff {status}: max rel err {self.max_rel_err:.3e}"


def finite_diff_check(
    params: ParamSet, specs, X, graph, loss_tail, tol: float = 1e-4, step: float = 1e-5
) -> FiniteDiffReport:
    """Compare analytic gradients with central differences in float64."""
    params64 = params.astype(np.float64)
    X64 = np.asarray(X, dtype=np.float64)
    _, grads = gradients(params64, specs, X64, graph, loss_tail)

    def loss_at(p: ParamSet) -> float:
        Y = _forward_full(p, specs, X64, graph)[0][-1]
        return loss_tail.value(Y)

    per_tensor = {}
    max_rel = 0.0
    for group, gvals in (("W", grads.weights), ("b", grads.biases)):
        for li, g in enumerate(gvals):
            arrs = params64.weights if group == "W" else params64.biases
            a = arrs[li]
            worst = 0.0
            flat = a.ravel()
            for idx in range(flat.size):
                orig = flat[idx]
                flat[idx] = orig + step
                up = loss_at(params64)
                flat[idx] = orig - step
                dn = loss_at(params64)
                flat[idx] = orig
                numeric = (up - dn) / (2.0 * step)
                analytic = g.ravel()[idx]
                rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)
                worst = max(worst, rel)
            per_tensor[f"{group}{li}"] = worst
            max_rel = max(max_rel, worst)
    return FiniteDiffReport(max_rel <= tol, max_rel, per_tensor)


# ---------------------------------------------------------------------------
# checkpoints

_CKPT_MAGIC = b"STINR-PARAMS v1\n"


def save_params(params: ParamSet, path) -> None:
    """Versioned binary dump: magic, JSON manifest, raw little-endian arrays."""
    manifest = {
        "dtype": np.dtype(params.dtype).name,
        "weights": [list(w.shape) for w in params.weights],
        "biases": [list(b.shape) for b in params.biases],
        "fourier_b": None if params.fourier_b is None else list(params.fourier_b.shape),
    }
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(json.dumps(manifest, sort_keys=True).encode() + b"\n")
        for arr in params.weights + params.biases:
            fh.write(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())
        if params.fourier_b is not None:
            b = params.fourier_b
            fh.write(np.ascontiguousarray(b, dtype=b.dtype.newbyteorder("<")).tobytes())


def load_params(path, specs=None) -> ParamSet:
    """Read a checkpoint; optionally validate shapes against layer specs."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_CKPT_MAGIC))
        if magic != _CKPT_MAGIC:
            raise DataError(f"{path}: not a parameter checkpoint (bad magic)")
        manifest = json.loads(fh.readline().decode())
        dtype = np.dtype(manifest["dtype"]).newbyteorder("<")

        def read_arr(shape):
            size = int(np.prod(shape)) if shape else 1
            buf = fh.read(size * dtype.itemsize)
            if len(buf) != size * dtype.itemsize:
                raise DataError(f"{path}: truncated checkpoint")
            return np.frombuffer(buf, dtype=dtype).reshape(shape).astype(manifest["dtype"])

        weights = [read_arr(s) for s in manifest["weights"]]
        biases = [read_arr(s) for s in manifest["biases"]]
        fourier_b = None
        if manifest["fourier_b"] is not None:
            fourier_b = read_arr(manifest["fourier_b"])
    params = ParamSet(weights, biases, fourier_b)
    if specs is not None:
        if len(specs) != len(weights):
            raise DataError(f"{path}: {len(weights)} layers, specs describe {len(specs)}")
        for li, (spec, w, b) in enumerate(zip(specs, weights, biases)):
            if w.shape != (spec.in_dim, spec.out_dim) or b.shape != (spec.out_dim,):
                raise DataError(
                    f"{path}: layer {li} shape {w.shape} does not match "
                    f"spec ({spec.in_dim}, {spec.out_dim})"
                )
    return params
