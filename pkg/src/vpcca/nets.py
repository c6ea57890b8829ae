"""Fully connected networks with hand-written reverse-mode gradients.

A network is a stack of ReLU hidden layers followed by one or more affine
output heads, each passed through its own gate (linear, sigmoid or
softplus).  Parameters live in a :class:`ParamStore` keyed by
``"<prefix>/<tensor>"`` so that several networks can share one optimizer.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

GATES = ("linear", "sigmoid", "softplus")
BERNOULLI_CLAMP = 1e-6
GAUSS_VAR_MIN = 1e-6
DTYPES = {"float32": np.float32, "float64": np.float64}


class NonFiniteError(FloatingPointError):
    """Raised when activations, losses or gradients stop being finite."""


@dataclass(frozen=True)
class MlpSpec:
    in_width: int
    widths: tuple[int, ...]
    heads: tuple[tuple[str, int, str], ...]
    dropout: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "heads", tuple((str(n), int(w), str(g)) for n, w, g in self.heads))
        if self.in_width < 1 or any(w < 1 for w in self.widths):
            raise ValueError("layer widths must be >= 1")
        if not self.heads:
            raise ValueError("a network needs at least one output head")
        names = [h[0] for h in self.heads]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate head names {names}")
        for name, width, gate in self.heads:
            if width < 1:
                raise ValueError(f"head {name!r} has width {width}")
            if gate not in GATES:
                raise ValueError(f"head {name!r}: unknown gate {gate!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    def shapes(self) -> dict[str, tuple[int, int] | tuple[int]]:
        out = {}
        fan_in = self.in_width
        for i, w in enumerate(self.widths):
            out[f"W{i}"] = (fan_in, w)
            out[f"b{i}"] = (w,)
            fan_in = w
        for name, w, _ in self.heads:
            out[f"W_{name}"] = (fan_in, w)
            out[f"b_{name}"] = (w,)
        return out


@dataclass
class ParamStore:
    params: dict[str, np.ndarray] = field(default_factory=dict)
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    dtype: type = np.float64

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self.params:
            raise ValueError(f"parameter {name!r} already exists")
        value = np.array(value, dtype=self.dtype)
        self.params[name] = value
        self.m[name] = np.zeros_like(value)
        self.v[name] = np.zeros_like(value)

    def __getitem__(self, name):
        return self.params[name]

    def names(self) -> list[str]:
        return list(self.params)

    def copy(self) -> "ParamStore":
        return ParamStore({k: a.copy() for k, a in self.params.items()},
                          {k: a.copy() for k, a in self.m.items()},
                          {k: a.copy() for k, a in self.v.items()}, self.t, self.dtype)

    def astype(self, dtype) -> "ParamStore":
        dtype = np.dtype(dtype).type
        return ParamStore({k: a.astype(dtype) for k, a in self.params.items()},
                          {k: a.astype(dtype) for k, a in self.m.items()},
                          {k: a.astype(dtype) for k, a in self.v.items()}, self.t, dtype)

    def check(self) -> None:
        for k, a in self.params.items():
            if self.m[k].shape != a.shape or self.v[k].shape != a.shape:
                raise ValueError(f"{k}: moment shapes do not match the parameter")
            if not np.all(np.isfinite(a)):
                raise NonFiniteError(f"parameter {k} has non-finite entries")


def init_params(store: ParamStore, prefix: str, spec: MlpSpec, rng) -> None:
    """Glorot-uniform weights, zero biases."""
    for name, shape in spec.shapes().items():
        if name.startswith("W"):
            limit = math.sqrt(6.0 / (shape[0] + shape[1]))
            store.add(f"{prefix}/{name}", rng.uniform(-limit, limit, size=shape))
        else:
            store.add(f"{prefix}/{name}", np.zeros(shape))


def softplus(a):
    return np.maximum(a, 0.0) + np.log1p(np.exp(-np.abs(a)))


def _gate(a, gate):
    if gate == "linear":
        return a
    if gate == "sigmoid":
        return expit(a)
    return softplus(a)


def _gate_grad(a, y, gate):
    if gate == "linear":
        return 1.0
    if gate == "sigmoid":
        return y * (1.0 - y)
    return expit(a)


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]
    pre: list[np.ndarray]
    masks: list[np.ndarray | None]
    head_pre: dict[str, np.ndarray]
    outputs: dict[str, np.ndarray]


def _finite(a, where):
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"non-finite activations at {where}")


def forward(spec: MlpSpec, store: ParamStore, x, prefix: str, train: bool = False, seed=None):
    """Run the network; returns ``(heads, cache)``.

    Inverted dropout is applied to hidden activations when ``train`` is set
    and the rate is positive; the masks are drawn from ``seed``.
    """
    x = np.asarray(x, dtype=store.dtype)
    if x.ndim != 2 or x.shape[1] != spec.in_width:
        raise ValueError(f"{prefix}: expected input of width {spec.in_width}, got shape {x.shape}")
    rng = np.random.default_rng(seed) if train and spec.dropout > 0 else None
    keep = 1.0 - spec.dropout
    inputs, pre, masks = [], [], []
    h = x
    for i in range(len(spec.widths)):
        inputs.append(h)
        a = h @ store[f"{prefix}/W{i}"] + store[f"{prefix}/b{i}"]
        _finite(a, f"{prefix} layer {i}")
        pre.append(a)
        h = np.maximum(a, 0.0)
        if rng is not None:
            mask = (rng.random(h.shape) < keep).astype(store.dtype) / store.dtype(keep)
            h = h * mask
            masks.append(mask)
        else:
            masks.append(None)
    inputs.append(h)
    head_pre, outputs = {}, {}
    for name, _, gate in spec.heads:
        a = h @ store[f"{prefix}/W_{name}"] + store[f"{prefix}/b_{name}"]
        _finite(a, f"{prefix} layer {len(spec.widths)} head {name}")
        head_pre[name] = a
        outputs[name] = _gate(a, gate)
    return outputs, ForwardCache(inputs, pre, masks, head_pre, outputs)


def backward(spec: MlpSpec, store: ParamStore, cache: ForwardCache, gout: dict, prefix: str,
             grads: dict | None = None):
    """Accumulate parameter gradients into ``grads`` and return ``(grads, d loss / d input)``.

    Heads missing from ``gout`` contribute nothing.
    """
    grads = {} if grads is None else grads
    h = cache.inputs[-1]
    gh = np.zeros_like(h)
    for name, _, gate in spec.heads:
        g = gout.get(name)
        if g is None:
            continue
        ga = np.asarray(g, dtype=store.dtype) * _gate_grad(cache.head_pre[name], cache.outputs[name], gate)
        _acc(grads, f"{prefix}/W_{name}", h.T @ ga)
        _acc(grads, f"{prefix}/b_{name}", ga.sum(axis=0))
        gh += ga @ store[f"{prefix}/W_{name}"].T
    for i in reversed(range(len(spec.widths))):
        if cache.masks[i] is not None:
            gh = gh * cache.masks[i]
        ga = gh * (cache.pre[i] > 0.0)
        _acc(grads, f"{prefix}/W{i}", cache.inputs[i].T @ ga)
        _acc(grads, f"{prefix}/b{i}", ga.sum(axis=0))
        gh = ga @ store[f"{prefix}/W{i}"].T
    return grads, gh


def _acc(grads, name, g):
    if name in grads:
        grads[name] = grads[name] + g
    else:
        grads[name] = g


# ---------------------------------------------------------------------------
# observation models


def bernoulli_loglik(mean, x, reduce: str = "mean", grad: bool = False):
    """Sum over pixels of ``x log mu + (1 - x) log(1 - mu)``.

    ``reduce="mean"`` averages over rows, ``"rows"`` returns one value per
    row.  With ``grad`` the elementwise derivative w.r.t. ``mean`` of the
    reduced value is returned as well (zero where the clamp is active).
    """
    mean = np.asarray(mean)
    x = np.asarray(x)
    if np.any(x < 0.0) or np.any(x > 1.0):
        raise ValueError("Bernoulli targets must lie in [0, 1]")
    mu = np.clip(mean, BERNOULLI_CLAMP, 1.0 - BERNOULLI_CLAMP)
    ll = x * np.log(mu) + (1.0 - x) * np.log1p(-mu)
    rows = ll.sum(axis=-1)
    val = _reduce(rows, reduce)
    if not grad:
        return val
    inside = (mean > BERNOULLI_CLAMP) & (mean < 1.0 - BERNOULLI_CLAMP)
    g = np.where(inside, x / mu - (1.0 - x) / (1.0 - mu), 0.0)
    if reduce == "mean":
        g = g / rows.shape[0] if rows.ndim else g
    return val, g


def gaussian_loglik(mean, var, x, reduce: str = "mean", grad: bool = False):
    """Sum over coordinates of ``-(log(2 pi var) + (x - mu)^2 / var) / 2``.

    Variances are floored at ``GAUSS_VAR_MIN``.  With ``grad`` returns the
    derivatives w.r.t. ``mean`` and ``var``.
    """
    mean = np.asarray(mean)
    x = np.asarray(x)
    v = np.maximum(np.asarray(var), GAUSS_VAR_MIN)
    r = x - mean
    ll = -0.5 * (np.log(2.0 * math.pi * v) + r * r / v)
    rows = ll.sum(axis=-1)
    val = _reduce(rows, reduce)
    if not grad:
        return val
    scale = 1.0 / rows.shape[0] if reduce == "mean" and rows.ndim else 1.0
    gm = r / v * scale
    gv = np.where(np.asarray(var) >= GAUSS_VAR_MIN, 0.5 * (r * r / v - 1.0) / v, 0.0) * scale
    return val, gm, gv


def _reduce(rows, reduce):
    if reduce == "mean":
        return float(np.mean(rows)) if np.ndim(rows) else float(rows)
    if reduce == "rows":
        return rows
    raise ValueError(f"unknown reduction {reduce!r}")


# ---------------------------------------------------------------------------
# optimizer


def adam_step(store: ParamStore, grads: dict, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8, weight_decay: float = 0.0, t: int | None = None) -> ParamStore:
    """One bias-corrected Adam update in place.

    Weight decay enters as ``weight_decay * param`` added to the gradient.
    Parameters without a gradient entry are treated as having zero gradient.
    """
    t = store.t + 1 if t is None else int(t)
    if t < 1:
        raise ValueError("step counter must be >= 1")
    for name, g in grads.items():
        if name not in store.params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if np.shape(g) != store.params[name].shape:
            raise ValueError(f"{name}: gradient shape {np.shape(g)} != {store.params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {name}")
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in store.params.items():
        g = grads.get(name)
        g = np.zeros_like(p) if g is None else np.asarray(g, dtype=store.dtype)
        if weight_decay:
            g = g + weight_decay * p
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    store.t = t
    return store
