"""Variational training of the deep multi-view model.

Per view ``m`` an encoder maps ``x_m`` to diagonal posterior moments
``(mu_m, var_m)``; a shared encoder maps ``x*`` (the primary view or the
concatenation of all views) to the canonical correlations ``p``.  The latent
layer of :mod:`vpcca.mvlayer` turns these into posteriors over the shared
factor and the view-specific residuals, and a decoder per view maps the code
``z_m`` back to observation-space likelihood parameters.

The objective is the per-datum average of

    sum_m E[log p(x_m | z_m)] - KL(phi) - sum_m KL(eps_m)

with the expectation estimated from ``L`` reparameterized draws.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import mvlayer, nets
from .dataio import MultiViewBatch, read_container, write_container

VAR_OFFSET = 1e-6
LIKELIHOODS = ("bernoulli", "gaussian")
BASELINES = ("vpcca", "vcca")
F0_INPUTS = ("primary", "concat")
EVAL_CHUNK = 2000
BAD_EPOCH_LIMIT = 3


def _ints(text) -> tuple[int, ...]:
    if isinstance(text, (tuple, list)):
        return tuple(int(v) for v in text)
    text = str(text).strip()
    return tuple(int(v) for v in text.split(",")) if text else ()


def _floats(text) -> tuple[float, ...]:
    if isinstance(text, (tuple, list)):
        return tuple(float(v) for v in text)
    return tuple(float(v) for v in str(text).split(",") if v.strip())


def _words(text) -> tuple[str, ...]:
    if isinstance(text, (tuple, list)):
        return tuple(str(v) for v in text)
    return tuple(v.strip() for v in str(text).split(",") if v.strip())


def _opt_float(text):
    if text is None or str(text).strip().lower() in ("", "none"):
        return None
    return float(text)


# dotted key -> (attribute, parser)
CONFIG_KEYS = {
    "model.d0": ("d0", int),
    "model.latent_dims": ("latent_dims", _ints),
    "model.enc_hidden": ("enc_hidden", _ints),
    "model.dec_hidden": ("dec_hidden", _ints),
    "model.likelihoods": ("likelihoods", _words),
    "model.gaussian_mean": ("gaussian_mean", str),
    "model.f0_input": ("f0_input", str),
    "model.baseline": ("baseline", str),
    "layer.lambda0": ("lambda0", float),
    "layer.lambdas": ("lambdas", _floats),
    "layer.mu0_mode": ("mu0_mode", str),
    "optim.mc_samples": ("mc_samples", int),
    "optim.batch_size": ("batch_size", int),
    "optim.lr": ("lr", float),
    "optim.epochs": ("epochs", int),
    "optim.weight_decay": ("weight_decay", float),
    "optim.beta1": ("beta1", float),
    "optim.beta2": ("beta2", float),
    "reg.dropout": ("dropout", float),
    "reg.f0_dropout": ("f0_dropout", _opt_float),
    "run.seed": ("seed", int),
    "run.dtype": ("dtype", str),
}


@dataclass
class TrainConfig:
    d0: int = 10
    latent_dims: tuple[int, ...] = (20,)
    enc_hidden: tuple[int, ...] = (256, 256, 256)
    dec_hidden: tuple[int, ...] = (256, 256, 256)
    likelihoods: tuple[str, ...] = ("bernoulli", "gaussian")
    gaussian_mean: str = "sigmoid"
    f0_input: str = "primary"
    baseline: str = "vpcca"
    lambda0: float = 0.01
    lambdas: tuple[float, ...] = (1.0,)
    mu0_mode: str = "multimodal"
    mc_samples: int = 1
    batch_size: int = 200
    lr: float = 2e-4
    epochs: int = 30
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    dropout: float = 0.0
    f0_dropout: float | None = None
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.d0 < 1:
            raise ValueError("model.d0 must be >= 1")
        if self.mc_samples < 1:
            raise ValueError("optim.mc_samples must be >= 1")
        if self.batch_size < 1:
            raise ValueError("optim.batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("optim.epochs must be >= 0")
        if self.lr <= 0:
            raise ValueError("optim.lr must be positive")
        if self.lambda0 <= 0 or any(x <= 0 for x in self.lambdas) or not self.lambdas:
            raise ValueError("prior precisions must be positive")
        if self.mu0_mode not in mvlayer.MODES:
            raise ValueError(f"layer.mu0_mode must be one of {mvlayer.MODES}")
        if self.baseline not in BASELINES:
            raise ValueError(f"model.baseline must be one of {BASELINES}")
        if self.f0_input not in F0_INPUTS:
            raise ValueError(f"model.f0_input must be one of {F0_INPUTS}")
        if self.gaussian_mean not in ("linear", "sigmoid"):
            raise ValueError("model.gaussian_mean must be linear or sigmoid")
        if any(lk not in LIKELIHOODS for lk in self.likelihoods) or not self.likelihoods:
            raise ValueError(f"model.likelihoods entries must be in {LIKELIHOODS}")
        if self.dtype not in nets.DTYPES:
            raise ValueError(f"run.dtype must be one of {tuple(nets.DTYPES)}")
        for rate in (self.dropout, self.f0_dropout):
            if rate is not None and not 0.0 <= rate < 1.0:
                raise ValueError("dropout rates must be in [0, 1)")
        if any(d < self.d0 for d in self.latent_dims):
            raise ValueError("every latent view dimension must be >= d0")

    @classmethod
    def from_mapping(cls, items) -> "TrainConfig":
        kwargs = {}
        for key, value in dict(items).items():
            if key not in CONFIG_KEYS:
                raise KeyError(f"unknown configuration key {key!r}")
            attr, parse = CONFIG_KEYS[key]
            kwargs[attr] = parse(value)
        return cls(**kwargs)

    def to_mapping(self) -> dict[str, str]:
        out = {}
        for key, (attr, _) in CONFIG_KEYS.items():
            value = getattr(self, attr)
            if isinstance(value, tuple):
                value = ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
            elif isinstance(value, float):
                value = repr(value)
            out[key] = str(value)
        return out

    def per_view(self, name: str, M: int) -> tuple:
        values = getattr(self, name)
        if len(values) == 1:
            return tuple(values) * M
        if len(values) != M:
            raise ValueError(f"{name} lists {len(values)} entries for {M} views")
        return tuple(values)

    def view_f0_dropout(self) -> float:
        return self.dropout if self.f0_dropout is None else self.f0_dropout


@dataclass
class ElboBreakdown:
    recon: list[float]
    kl_phi: float
    kl_eps: list[float]

    @property
    def total(self) -> float:
        return sum(self.recon) - self.kl_phi - sum(self.kl_eps)

    def record(self, epoch: int, split: str) -> str:
        vals = [*self.recon, self.kl_phi, *self.kl_eps, self.total]
        return ",".join([str(epoch), split, *(f"{v:.9g}" for v in vals)])


@dataclass
class VpccaModel:
    config: TrainConfig
    in_dims: list[int]
    store: nets.ParamStore
    specs: dict[str, nets.MlpSpec] = field(default_factory=dict)

    @property
    def M(self) -> int:
        return len(self.in_dims)

    @property
    def latent_dims(self) -> tuple[int, ...]:
        return self.config.per_view("latent_dims", self.M)


def model_specs(config: TrainConfig, in_dims) -> dict[str, nets.MlpSpec]:
    M = len(in_dims)
    dims = config.per_view("latent_dims", M)
    liks = config.per_view("likelihoods", M)
    config.per_view("lambdas", M)
    if config.baseline == "vcca" and any(d != config.d0 for d in dims):
        raise ValueError("the vcca baseline needs every latent view dimension equal to d0")
    specs = {}
    f0_in = in_dims[0] if config.f0_input == "primary" else sum(in_dims)
    head = ("mu0", config.d0, "linear") if config.baseline == "vcca" else ("p", config.d0, "sigmoid")
    specs["shared"] = nets.MlpSpec(f0_in, config.enc_hidden, (head,), config.view_f0_dropout())
    for m, (d_in, d) in enumerate(zip(in_dims, dims)):
        specs[f"enc{m}"] = nets.MlpSpec(d_in, config.enc_hidden, (("mu", d, "linear"), ("var", d, "softplus")),
                                        config.dropout)
    for m, (d_in, d, lik) in enumerate(zip(in_dims, dims, liks)):
        if lik == "bernoulli":
            heads = (("mean", d_in, "sigmoid"),)
        else:
            heads = (("mean", d_in, config.gaussian_mean), ("var", d_in, "softplus"))
        specs[f"dec{m}"] = nets.MlpSpec(d, config.dec_hidden, heads, config.dropout)
    return specs


def build_model(config: TrainConfig, in_dims) -> VpccaModel:
    in_dims = [int(d) for d in in_dims]
    specs = model_specs(config, in_dims)
    rng = np.random.default_rng([config.seed, 0])
    store = nets.ParamStore(dtype=nets.DTYPES[config.dtype])
    for prefix, spec in specs.items():
        nets.init_params(store, prefix, spec, rng)
    return VpccaModel(config, in_dims, store, specs)


# ---------------------------------------------------------------------------
# forward / backward through encoders, latent layer and decoders


def _views(model: VpccaModel, batch) -> list[np.ndarray]:
    views = batch.views if isinstance(batch, MultiViewBatch) else list(batch)
    if len(views) != model.M:
        raise ValueError(f"model has {model.M} views, batch has {len(views)}")
    for m, (v, d) in enumerate(zip(views, model.in_dims)):
        if v is not None and np.shape(v)[1] != d:
            raise ValueError(f"view {m}: expected width {d}, got {np.shape(v)[1]}")
    return views


def _f0_input(model: VpccaModel, views):
    if model.config.f0_input == "primary":
        if views[0] is None:
            raise ValueError("the shared encoder needs the primary view")
        return views[0]
    if any(v is None for v in views):
        raise ValueError("the shared encoder reads the concatenation of all views")
    return np.hstack(views)


def _encode(model, views, train, rng, need):
    """Run the shared encoder and the view encoders listed in ``need``."""
    store = model.store
    seeds = rng.integers(2 ** 63, size=1 + model.M) if rng is not None else [None] * (1 + model.M)
    out = {}
    f0, c0 = nets.forward(model.specs["shared"], store, _f0_input(model, views), "shared", train, seeds[0])
    out["shared"] = (f0, c0)
    for m in need:
        if views[m] is None:
            raise ValueError(f"view {m} is required")
        o, c = nets.forward(model.specs[f"enc{m}"], store, views[m], f"enc{m}", train, seeds[1 + m])
        out[m] = (o, c)
    return out


def _moments(model, enc):
    mu = [np.asarray(enc[m][0]["mu"], dtype=np.float64) for m in range(model.M)]
    var = [np.asarray(enc[m][0]["var"], dtype=np.float64) + VAR_OFFSET for m in range(model.M)]
    f0 = enc["shared"][0]
    if model.config.baseline == "vcca":
        return mu, var, None, np.asarray(f0["mu0"], dtype=np.float64)
    p = mvlayer.P_MIN + (1.0 - 2.0 * mvlayer.P_MIN) * np.asarray(f0["p"], dtype=np.float64)
    return mu, var, p, None


def _check_finite(value, what):
    if not np.all(np.isfinite(value)):
        raise nets.NonFiniteError(f"non-finite {what}")


def elbo(model: VpccaModel, batch, seed, train: bool = True, grad: bool = False):
    """Per-datum average ELBO; with ``grad`` also the gradients of ``-ELBO`` for every parameter.

    All randomness (dropout masks and latent noise) comes from ``seed``.
    """
    cfg = model.config
    views = _views(model, batch)
    if any(v is None for v in views):
        raise ValueError("the objective needs every view")
    rng = np.random.default_rng(seed)
    M, L = model.M, cfg.mc_samples
    n = views[0].shape[0]
    enc = _encode(model, views, train, rng, range(M))
    mu, var, p, mu0 = _moments(model, enc)
    dims = model.latent_dims
    xi0 = rng.standard_normal((L * n, cfg.d0))
    xis = [rng.standard_normal((L * n, d)) for d in dims]
    dec_seeds = rng.integers(2 ** 63, size=M)
    tile = lambda a: None if a is None else np.tile(a, (L, 1))
    zs, kphi, keps, cache = mvlayer.layer_forward(
        [tile(a) for a in mu], [tile(a) for a in var], tile(p), cfg.lambda0,
        cfg.per_view("lambdas", M), cfg.mu0_mode, xi0, xis, mu0=tile(mu0))
    liks = cfg.per_view("likelihoods", M)
    recon, dec_out = [], []
    for m in range(M):
        z = zs[m].astype(model.store.dtype)
        out, c = nets.forward(model.specs[f"dec{m}"], model.store, z, f"dec{m}", train, dec_seeds[m])
        x = np.tile(np.asarray(views[m], dtype=np.float64), (L, 1))
        mean = np.asarray(out["mean"], dtype=np.float64)
        if liks[m] == "bernoulli":
            res = nets.bernoulli_loglik(mean, x, grad=grad)
        else:
            res = nets.gaussian_loglik(mean, np.asarray(out["var"], dtype=np.float64) + VAR_OFFSET, x, grad=grad)
        val = res[0] if grad else res
        _check_finite(val, f"reconstruction term of view {m}")
        recon.append(val)
        dec_out.append((c, res))
    kphi_mean = float(np.mean(kphi))
    keps_mean = [float(np.mean(k)) for k in keps]
    _check_finite(kphi_mean, "KL term of the shared factor")
    for m, k in enumerate(keps_mean):
        _check_finite(k, f"KL term of view {m}")
    breakdown = ElboBreakdown(recon, kphi_mean, keps_mean)
    if not grad:
        return breakdown

    grads = {}
    gz = []
    for m in range(M):
        c, res = dec_out[m]
        if liks[m] == "bernoulli":
            gout = {"mean": -res[1]}
        else:
            gout = {"mean": -res[1], "var": -res[2]}
        _, gzm = nets.backward(model.specs[f"dec{m}"], model.store, c, gout, f"dec{m}", grads)
        gz.append(np.asarray(gzm, dtype=np.float64))
    w = np.full(L * n, 1.0 / (L * n))
    gmu, gvar, gthird = mvlayer.layer_backward(cache, gz, w, [w] * M)
    fold = lambda a: a.reshape(L, n, -1).sum(axis=0)
    for m in range(M):
        nets.backward(model.specs[f"enc{m}"], model.store, enc[m][1],
                      {"mu": fold(gmu[m]), "var": fold(gvar[m])}, f"enc{m}", grads)
    if cfg.baseline == "vcca":
        g0 = {"mu0": fold(gthird)}
    else:
        g0 = {"p": fold(gthird) * (1.0 - 2.0 * mvlayer.P_MIN)}
    nets.backward(model.specs["shared"], model.store, enc["shared"][1], g0, "shared", grads)
    return breakdown, grads


def evaluate(model: VpccaModel, batch: MultiViewBatch, seed, chunk: int = EVAL_CHUNK) -> ElboBreakdown:
    """ELBO over a whole split without dropout, in row chunks with a fixed noise stream."""
    n = batch.n
    rng = np.random.default_rng(seed)
    recon = np.zeros(model.M)
    kphi = 0.0
    keps = np.zeros(model.M)
    for start in range(0, n, chunk):
        idx = np.arange(start, min(n, start + chunk))
        b = elbo(model, [v[idx] for v in batch.views], rng.integers(2 ** 63), train=False)
        frac = idx.size / n
        recon += frac * np.array(b.recon)
        kphi += frac * b.kl_phi
        keps += frac * np.array(b.kl_eps)
    return ElboBreakdown([float(v) for v in recon], float(kphi), [float(v) for v in keps])


# ---------------------------------------------------------------------------
# training loop


class TrainingDiverged(RuntimeError):
    def __init__(self, message, result):
        super().__init__(message)
        self.result = result


@dataclass
class TrainResult:
    model: VpccaModel
    log: list[str]
    best_epoch: int
    best_val: float
    history: list[tuple[ElboBreakdown, ElboBreakdown]]


def train_model(train_batch: MultiViewBatch, val_batch: MultiViewBatch, config: TrainConfig,
                log=None, model: VpccaModel | None = None) -> TrainResult:
    """Minibatch Adam on ``-ELBO``; the returned model holds the parameters of the best validation epoch.

    ``log`` may be a callable receiving each log line.  Three consecutive
    bad epochs (non-finite objective, or validation ELBO worse than the best
    by more than ten times its magnitude) stop training with
    :class:`TrainingDiverged`, whose ``result`` carries the best checkpoint.
    """
    config.validate()
    if train_batch.M != val_batch.M or train_batch.dims != val_batch.dims:
        raise ValueError("train and validation splits have different views")
    model = build_model(config, train_batch.dims) if model is None else model
    shuffle_rng = np.random.default_rng([config.seed, 1])
    noise_rng = np.random.default_rng([config.seed, 2])
    eval_seed = int(np.random.default_rng([config.seed, 3]).integers(2 ** 63))
    train_views = [np.asarray(v, dtype=model.store.dtype) for v in train_batch.views]
    lines, history = [], []

    def emit(line):
        lines.append(line)
        if log is not None:
            log(line)

    best_val, best_epoch, best_store = -math.inf, 0, model.store.copy()
    good_store = model.store.copy()
    bad = 0
    n = train_batch.n
    for epoch in range(1, config.epochs + 1):
        perm = shuffle_rng.permutation(n)
        failed = None
        try:
            for start in range(0, n, config.batch_size):
                idx = perm[start:start + config.batch_size]
                _, grads = elbo(model, [v[idx] for v in train_views], noise_rng.integers(2 ** 63), True, True)
                nets.adam_step(model.store, grads, config.lr, config.beta1, config.beta2,
                               weight_decay=config.weight_decay)
            tr = evaluate(model, train_batch, eval_seed)
            va = evaluate(model, val_batch, eval_seed)
        except nets.NonFiniteError as exc:
            failed = str(exc)
        if failed is None:
            emit(tr.record(epoch, "train"))
            emit(va.record(epoch, "val"))
            history.append((tr, va))
            total = va.total
            if not math.isfinite(total) or (math.isfinite(best_val) and total < best_val - 10.0 * abs(best_val)):
                failed = f"validation ELBO regressed to {total:.6g}"
        if failed is not None:
            bad += 1
            model.store = good_store.copy()
            if bad >= BAD_EPOCH_LIMIT:
                model.store = best_store
                result = TrainResult(model, lines, best_epoch, best_val, history)
                raise TrainingDiverged(f"training diverged at epoch {epoch}: {failed}", result)
            continue
        bad = 0
        good_store = model.store.copy()
        if va.total > best_val:
            best_val, best_epoch, best_store = va.total, epoch, model.store.copy()
    if config.epochs == 0:
        va = evaluate(model, val_batch, eval_seed)
        best_val = va.total
    model.store = best_store
    return TrainResult(model, lines, best_epoch, best_val, history)


# ---------------------------------------------------------------------------
# test-time use


def posterior(model: VpccaModel, views, mode: str = "primary", chunk: int = EVAL_CHUNK):
    """Shared means ``mu0`` and the layer parameters for every row, without dropout.

    ``mode="primary"`` only needs the views read by the shared encoder and
    the primary encoder; ``"multimodal"`` needs every view.
    """
    if mode not in mvlayer.MODES:
        raise ValueError(f"mode must be one of {mvlayer.MODES}")
    views = _views(model, views)
    if views[0] is None:
        raise ValueError("the primary view is required")
    need = range(model.M) if mode == "multimodal" else [0]
    n = views[0].shape[0]
    cfg = model.config
    mu0s, params = [], []
    for start in range(0, n, chunk):
        sub = [None if v is None else np.asarray(v[start:start + chunk], dtype=model.store.dtype) for v in views]
        enc = _encode(model, sub, False, None, need)
        f0 = enc["shared"][0]
        mus = [np.asarray(enc[m][0]["mu"], dtype=np.float64) for m in need]
        var = [np.asarray(enc[m][0]["var"], dtype=np.float64) + VAR_OFFSET for m in need]
        lambdas = [cfg.per_view("lambdas", model.M)[m] for m in need]
        if cfg.baseline == "vcca":
            mu0s.append(np.asarray(f0["mu0"], dtype=np.float64))
            continue
        p = mvlayer.P_MIN + (1.0 - 2.0 * mvlayer.P_MIN) * np.asarray(f0["p"], dtype=np.float64)
        prm = mvlayer.build_params(mvlayer.PosteriorMoments(mus, var, p), cfg.lambda0, lambdas, mode)
        mu0s.append(prm.mu0)
        params.append(prm)
    return np.vstack(mu0s), params


def embed(model: VpccaModel, views, mode: str = "primary") -> np.ndarray:
    """``N x d0`` matrix of shared-factor posterior means."""
    return posterior(model, views, mode)[0]


def sample_observations(model: VpccaModel, views, seed, mode: str = "multimodal") -> list[np.ndarray]:
    """Decoder means for one posterior draw of every row (needs every view)."""
    views = _views(model, views)
    if any(v is None for v in views):
        raise ValueError("sampling reconstructions needs every view")
    enc = _encode(model, [np.asarray(v, dtype=model.store.dtype) for v in views], False, None, range(model.M))
    mu, var, p, mu0 = _moments(model, enc)
    cfg = model.config
    rng = np.random.default_rng(seed)
    n = views[0].shape[0]
    xi0 = rng.standard_normal((n, cfg.d0))
    xis = [rng.standard_normal((n, d)) for d in model.latent_dims]
    zs = mvlayer.layer_forward(mu, var, p, cfg.lambda0, cfg.per_view("lambdas", model.M), mode,
                               xi0, xis, mu0=mu0)[0]
    out = []
    for m, z in enumerate(zs):
        heads, _ = nets.forward(model.specs[f"dec{m}"], model.store, z.astype(model.store.dtype), f"dec{m}")
        out.append(np.asarray(heads["mean"], dtype=np.float64))
    return out


def importance_log_likelihood(model: VpccaModel, views, n_particles: int, seed) -> np.ndarray:
    """Per-row importance-sampling estimate of ``log p(x)`` with the posterior as proposal.

    The loadings are those produced by the encoders for each row, so the
    target is the marginal likelihood of the generative model they define.
    """
    views = _views(model, views)
    cfg = model.config
    if cfg.baseline == "vcca":
        raise ValueError("importance sampling is implemented for the vpcca layer only")
    enc = _encode(model, [np.asarray(v, dtype=model.store.dtype) for v in views], False, None, range(model.M))
    mu, var, p, _ = _moments(model, enc)
    lambdas = cfg.per_view("lambdas", model.M)
    prm = mvlayer.build_params(mvlayer.PosteriorMoments(mu, var, p), cfg.lambda0, lambdas, cfg.mu0_mode)
    liks = cfg.per_view("likelihoods", model.M)
    rng = np.random.default_rng(seed)
    n = views[0].shape[0]
    logw = np.empty((n_particles, n))
    for k in range(n_particles):
        xi0 = rng.standard_normal((n, cfg.d0))
        xis = [rng.standard_normal((n, d)) for d in model.latent_dims]
        draw = mvlayer.reparameterize(prm, xi0, xis)
        lw = _log_normal(draw.phi, 0.0, 1.0 / cfg.lambda0) - _log_normal(draw.phi, prm.mu0, 1.0)
        for m in range(model.M):
            lw += _log_normal(draw.eps[m], 0.0, 1.0 / lambdas[m]) - _log_normal(draw.eps[m], prm.mu_eps[m],
                                                                                 prm.psi_diag[m])
            heads, _ = nets.forward(model.specs[f"dec{m}"], model.store, draw.z[m].astype(model.store.dtype),
                                    f"dec{m}")
            mean = np.asarray(heads["mean"], dtype=np.float64)
            x = np.asarray(views[m], dtype=np.float64)
            if liks[m] == "bernoulli":
                lw += nets.bernoulli_loglik(mean, x, reduce="rows")
            else:
                v = np.asarray(heads["var"], dtype=np.float64) + VAR_OFFSET
                lw += nets.gaussian_loglik(mean, v, x, reduce="rows")
        logw[k] = lw
    top = logw.max(axis=0)
    return top + np.log(np.mean(np.exp(logw - top), axis=0))


def _log_normal(x, mean, var):
    var = np.broadcast_to(var, np.shape(x))
    return -0.5 * np.sum(np.log(2.0 * math.pi * var) + (x - mean) ** 2 / var, axis=-1)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(directory, model: VpccaModel) -> None:
    """``params.mvt`` (parameters and Adam moments), ``manifest.txt`` and ``config.txt``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    store = model.store
    records, manifest = {}, []
    for name in store.names():
        for kind, src in (("param", store.params), ("adam_m", store.m), ("adam_v", store.v)):
            records[f"{kind}:{name}"] = src[name]
            manifest.append(f"{name}\t{'x'.join(map(str, src[name].shape))}\t{kind}")
    records["adam_t"] = np.array([float(store.t)])
    write_container(directory / "params.mvt", records)
    (directory / "manifest.txt").write_text("\n".join(manifest) + "\n")
    cfg = model.config.to_mapping()
    cfg["data.in_dims"] = ",".join(map(str, model.in_dims))
    (directory / "config.txt").write_text("".join(f"{k}={v}\n" for k, v in cfg.items()))


def load_checkpoint(directory) -> VpccaModel:
    directory = Path(directory)
    items = {}
    for line in (directory / "config.txt").read_text().splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            items[key.strip()] = value.strip()
    in_dims = [int(v) for v in items.pop("data.in_dims").split(",")]
    config = TrainConfig.from_mapping(items)
    model = build_model(config, in_dims)
    records = read_container(directory / "params.mvt")
    store = model.store
    for name in store.names():
        for kind, dst in (("param", store.params), ("adam_m", store.m), ("adam_v", store.v)):
            key = f"{kind}:{name}"
            if key not in records:
                raise ValueError(f"checkpoint lacks {key}")
            if records[key].shape != dst[name].shape:
                raise ValueError(f"{key}: shape {records[key].shape} != {dst[name].shape}")
            dst[name] = records[key].astype(store.dtype)
    store.t = int(records["adam_t"][0])
    return model
