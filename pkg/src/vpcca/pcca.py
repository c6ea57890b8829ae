"""Exact linear CCA and maximum-likelihood probabilistic CCA.

Gauge conventions used by the fits: ``mu0 = 0`` and ``mu_eps[m]`` equal to the
sample mean of view ``m``; the loading factor ``M_m`` is ``P^{1/2}`` and the
rotation is the identity.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from . import numkit
from .dataio import MultiViewBatch

RIDGE = 1e-8


@dataclass
class CcaSolution:
    """Canonical directions ``u1``/``u2`` (columns), correlations ``p`` and the moments they came from.

    ``v1``/``v2`` are the orthonormal singular vectors of the whitened
    cross-correlation matrix, so ``u_m = sigma_mm^{-1/2} v_m``.
    """

    u1: np.ndarray
    u2: np.ndarray
    p: np.ndarray
    mu1: np.ndarray
    mu2: np.ndarray
    sigma11: np.ndarray
    sigma22: np.ndarray
    sigma12: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    n_clipped: int = 0


@dataclass
class LinearPccaModel:
    """z_m | phi ~ N(W_m phi + mu_eps_m, Psi_m),  phi ~ N(mu0, I)."""

    w: list[np.ndarray]
    psi: list[np.ndarray]
    mu_eps: list[np.ndarray]
    mu0: np.ndarray
    p: np.ndarray | None = None
    n_clipped: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def M(self) -> int:
        return len(self.w)

    @property
    def d0(self) -> int:
        return int(self.mu0.shape[0])

    @property
    def dims(self) -> list[int]:
        return [int(w.shape[0]) for w in self.w]

    def validate(self) -> None:
        if not (len(self.w) == len(self.psi) == len(self.mu_eps)) or self.M < 1:
            raise ValueError("per-view parameter lists differ in length")
        for m, (w, psi, mu) in enumerate(zip(self.w, self.psi, self.mu_eps)):
            d = w.shape[0]
            if w.shape != (d, self.d0) or psi.shape != (d, d) or mu.shape != (d,):
                raise ValueError(f"view {m}: inconsistent shapes W{w.shape} Psi{psi.shape} mu{mu.shape}")
            if self.d0 > d:
                raise ValueError(f"view {m}: d0={self.d0} exceeds view dimension {d}")
            numkit.check_symmetric(psi)
            lo = numkit.sym_eig(psi)[0][-1]
            if lo < -1e-9:
                raise numkit.NotPositiveDefiniteError(float(lo), f"view {m}: Psi is not PSD (eigenvalue {lo:.3g})")

    def joint_moments(self) -> tuple[np.ndarray, np.ndarray]:
        """Marginal mean and covariance of the stacked views."""
        w = np.vstack(self.w)
        mu = np.concatenate([wm @ self.mu0 + me for wm, me in zip(self.w, self.mu_eps)])
        dims = self.dims
        psi = np.zeros((sum(dims), sum(dims)))
        off = 0
        for d, ps in zip(dims, self.psi):
            psi[off:off + d, off:off + d] = ps
            off += d
        return mu, w @ w.T + psi


def _moments(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = x.mean(axis=0)
    xc = x - mu
    return mu, xc


def _ridge(cov: np.ndarray) -> np.ndarray:
    d = cov.shape[0]
    return cov + np.eye(d) * (RIDGE * np.trace(cov) / d)


def _clip_p(p: np.ndarray) -> tuple[np.ndarray, int]:
    clipped = int(np.sum((p < 0.0) | (p > 1.0)))
    return np.clip(p, 0.0, 1.0), clipped


def _as_data(x, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"{name} must be a 2-D data matrix")
    return x


def fit_cca(x1, x2, d0: int) -> CcaSolution:
    x1 = _as_data(x1, "x1")
    x2 = _as_data(x2, "x2")
    n, d1 = x1.shape
    d2 = x2.shape[1]
    if x2.shape[0] != n:
        raise ValueError("views have different numbers of rows")
    if n <= max(d1, d2):
        raise ValueError(f"need more rows than dimensions (N={n}, d1={d1}, d2={d2})")
    if not 0 < d0 <= min(d1, d2):
        raise ValueError(f"d0 must be in 1..{min(d1, d2)}, got {d0}")
    mu1, c1 = _moments(x1)
    mu2, c2 = _moments(x2)
    s11 = _ridge(c1.T @ c1 / n)
    s22 = _ridge(c2.T @ c2 / n)
    s12 = c1.T @ c2 / n
    try:
        w1 = numkit.spd_inv_sqrt(s11)
        w2 = numkit.spd_inv_sqrt(s22)
    except numkit.NotPositiveDefiniteError as exc:
        raise ValueError(f"covariance is rank deficient beyond ridge repair: {exc}") from None
    res = numkit.svd(w1 @ s12 @ w2)
    v1 = res.u[:, :d0]
    v2 = res.vt[:d0].T
    p, clipped = _clip_p(res.s[:d0])
    return CcaSolution(
        u1=w1 @ v1, u2=w2 @ v2, p=p, mu1=mu1, mu2=mu2,
        sigma11=s11, sigma22=s22, sigma12=s12, v1=v1, v2=v2, n_clipped=clipped,
    )


def fit_pcca_ml(x1, x2, d0: int) -> LinearPccaModel:
    sol = fit_cca(x1, x2, d0)
    root_p = np.sqrt(sol.p)
    w1 = sol.sigma11 @ sol.u1 * root_p
    w2 = sol.sigma22 @ sol.u2 * root_p
    psi1 = sol.sigma11 - w1 @ w1.T
    psi2 = sol.sigma22 - w2 @ w2.T
    return LinearPccaModel(
        w=[w1, w2],
        psi=[0.5 * (psi1 + psi1.T), 0.5 * (psi2 + psi2.T)],
        mu_eps=[sol.mu1.copy(), sol.mu2.copy()],
        mu0=np.zeros(d0),
        p=sol.p,
        n_clipped=sol.n_clipped,
        extra={"cca": sol},
    )


def fit_mv_ml(xs, d0: int) -> LinearPccaModel:
    """M-view fit with one set of orthonormal directions shared by all views.

    The shared basis and correlations come from the eigendecomposition of the
    average symmetrised whitened correlation matrix over all view pairs.
    """
    xs = [_as_data(x, f"x[{m}]") for m, x in enumerate(xs)]
    if len(xs) < 2:
        raise ValueError("need at least two views")
    n = xs[0].shape[0]
    dims = {x.shape[1] for x in xs}
    if any(x.shape[0] != n for x in xs):
        raise ValueError("views have different numbers of rows")
    if len(dims) != 1:
        raise ValueError(f"a shared direction basis needs equal view dimensions, got {sorted(dims)}")
    d = dims.pop()
    if n <= d:
        raise ValueError(f"need more rows than dimensions (N={n}, d={d})")
    if not 0 < d0 <= d:
        raise ValueError(f"d0 must be in 1..{d}, got {d0}")
    mus, centred, covs, whiten = [], [], [], []
    for x in xs:
        mu, xc = _moments(x)
        cov = _ridge(xc.T @ xc / n)
        mus.append(mu)
        centred.append(xc)
        covs.append(cov)
        try:
            whiten.append(numkit.spd_inv_sqrt(cov))
        except numkit.NotPositiveDefiniteError as exc:
            raise ValueError(f"covariance is rank deficient beyond ridge repair: {exc}") from None
    acc = np.zeros((d, d))
    pairs = list(itertools.combinations(range(len(xs)), 2))
    for l, m in pairs:
        c = whiten[l] @ (centred[l].T @ centred[m] / n) @ whiten[m]
        acc += 0.5 * (c + c.T)
    evals, evecs = numkit.sym_eig(acc / len(pairs))
    p, clipped = _clip_p(evals[:d0])
    u = evecs[:, :d0]
    ws, psis = [], []
    for cov in covs:
        w = numkit.spd_sqrt(cov) @ u * np.sqrt(p)
        psi = cov - w @ w.T
        ws.append(w)
        psis.append(0.5 * (psi + psi.T))
    return LinearPccaModel(w=ws, psi=psis, mu_eps=mus, mu0=np.zeros(d0), p=p, n_clipped=clipped,
                           extra={"u": u})


def sample_generative(model: LinearPccaModel, n: int, seed, phi_offsets=None) -> MultiViewBatch:
    """Draw ``n`` rows from the generative model.

    ``phi_offsets`` (n x d0), when given, is added to the shared factor of
    each row; it is how planted cluster structure is injected.
    """
    model.validate()
    rng = np.random.default_rng(seed)
    phi = model.mu0 + rng.standard_normal((n, model.d0))
    if phi_offsets is not None:
        phi = phi + phi_offsets
    views = []
    for w, psi, mu in zip(model.w, model.psi, model.mu_eps):
        root = numkit.psd_sqrt(psi)
        noise = rng.standard_normal((n, w.shape[0])) @ root
        views.append(phi @ w.T + mu + noise)
    return MultiViewBatch(views)


def log_likelihood(model: LinearPccaModel, batch) -> float:
    """Average exact log-density of the rows of ``batch`` under the joint Gaussian marginal."""
    views = batch.views if isinstance(batch, MultiViewBatch) else batch
    if len(views) != model.M:
        raise ValueError(f"model has {model.M} views, batch has {len(views)}")
    for m, (x, d) in enumerate(zip(views, model.dims)):
        if np.asarray(x).shape[1] != d:
            raise ValueError(f"view {m}: expected {d} columns, got {np.asarray(x).shape[1]}")
    z = np.hstack([np.asarray(x, dtype=np.float64) for x in views])
    mu, cov = model.joint_moments()
    try:
        chol = numkit.cholesky(0.5 * (cov + cov.T))
    except numkit.NotPositiveDefiniteError as exc:
        raise ValueError(f"joint covariance is singular: {exc}") from None
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    r = solve_triangular(chol, (z - mu).T, lower=True)
    quad = np.sum(r * r, axis=0)
    dim = z.shape[1]
    return float(np.mean(-0.5 * (dim * math.log(2.0 * math.pi) + logdet + quad)))


def _orthonormal(rng, d: int, k: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((d, k)))
    return q * np.sign(np.diag(r))


def random_model(dims, p, seed, shared: bool | None = None, mean_scale: float = 1.0) -> LinearPccaModel:
    """A generative model with known canonical correlations ``p``.

    Each view gets a random covariance ``S_m`` with eigenvalues in [0.5, 2]
    and loadings ``W_m = S_m^{1/2} V_m diag(sqrt(p))`` with orthonormal
    ``V_m``; ``Psi_m = S_m - W_m W_m^T`` is then positive semi-definite.
    With ``shared`` (default: when all views have the same dimension) one
    ``V`` is used for every view.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or np.any(p < 0) or np.any(p > 1):
        raise ValueError("correlations must be a vector in [0, 1]")
    dims = [int(d) for d in dims]
    d0 = p.shape[0]
    if any(d < d0 for d in dims):
        raise ValueError("every view needs dimension >= d0")
    shared = len(set(dims)) == 1 if shared is None else shared
    if shared and len(set(dims)) != 1:
        raise ValueError("a shared basis needs equal view dimensions")
    rng = np.random.default_rng(seed)
    v_shared = _orthonormal(rng, dims[0], d0) if shared else None
    ws, psis, mus = [], [], []
    for d in dims:
        q = _orthonormal(rng, d, d)
        s = (q * rng.uniform(0.5, 2.0, size=d)) @ q.T
        s = 0.5 * (s + s.T)
        v = v_shared if shared else _orthonormal(rng, d, d0)
        w = numkit.spd_sqrt(s) @ v * np.sqrt(p)
        psi = s - w @ w.T
        ws.append(w)
        psis.append(0.5 * (psi + psi.T))
        mus.append(rng.standard_normal(d) * mean_scale)
    model = LinearPccaModel(w=ws, psi=psis, mu_eps=mus, mu0=np.zeros(d0), p=p.copy())
    model.validate()
    return model


def model_records(model: LinearPccaModel) -> dict[str, np.ndarray]:
    """Tensor records for the container format."""
    out = {"mu0": model.mu0}
    for m in range(model.M):
        out[f"w{m}"] = model.w[m]
        out[f"psi{m}"] = model.psi[m]
        out[f"mu_eps{m}"] = model.mu_eps[m]
    if model.p is not None:
        out["p"] = model.p
    return out


def model_from_records(records) -> LinearPccaModel:
    ws, psis, mus = [], [], []
    while f"w{len(ws)}" in records:
        m = len(ws)
        ws.append(records[f"w{m}"])
        psis.append(records[f"psi{m}"])
        mus.append(records[f"mu_eps{m}"])
    model = LinearPccaModel(w=ws, psi=psis, mu_eps=mus, mu0=records["mu0"], p=records.get("p"))
    model.validate()
    return model
