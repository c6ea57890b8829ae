"""The latent linear multi-view layer.

Encoders give per-view diagonal posterior moments ``(mu_m, var_m)`` and a
vector ``p`` of canonical correlations.  With diagonal covariances the
canonical directions are coordinate axes, so each loading matrix ``W_m`` is
zero except for its leading ``d0 x d0`` diagonal block, whose entries are
``sqrt(var_mi * p_i)``.  The shared factor loads on the first ``d0``
coordinates of every view.

All functions accept either single vectors or batches with leading axes;
reductions are over the last axis.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PSI_MIN = 1e-6
VAR_MIN = 1e-6
P_MIN = 1e-4

MODES = ("multimodal", "primary")


@dataclass
class PosteriorMoments:
    mu: list[np.ndarray]
    var: list[np.ndarray]
    p: np.ndarray

    @property
    def d0(self) -> int:
        return int(np.shape(self.p)[-1])

    def checked(self) -> "PosteriorMoments":
        """Copy with the variance floor applied and ``p`` checked to lie in [0, 1].

        Encoders keep ``p`` inside ``[P_MIN, 1 - P_MIN]`` through their output
        map; the layer itself accepts the closed interval.
        """
        if len(self.mu) != len(self.var) or not self.mu:
            raise ValueError("mu and var must list the same, non-zero number of views")
        mu = [np.asarray(m, dtype=float) for m in self.mu]
        var = [np.maximum(np.asarray(v, dtype=float), VAR_MIN) for v in self.var]
        p = np.asarray(self.p, dtype=float)
        if np.any(~np.isfinite(p)) or np.any(p < 0.0) or np.any(p > 1.0):
            raise ValueError("canonical correlations must lie in [0, 1]")
        for m, (a, b) in enumerate(zip(mu, var)):
            if a.shape != b.shape:
                raise ValueError(f"view {m}: mu{a.shape} and var{b.shape} differ")
            if a.shape[-1] < p.shape[-1]:
                raise ValueError(f"view {m}: dimension {a.shape[-1]} below d0={p.shape[-1]}")
        return PosteriorMoments(mu, var, p)


@dataclass
class MvLayerParams:
    """Loadings ``w[m]`` hold only the ``d0`` diagonal entries of ``W_m``."""

    w: list[np.ndarray]
    psi_diag: list[np.ndarray]
    mu_eps: list[np.ndarray]
    mu0: np.ndarray
    lambda0: float
    lambdas: list[float]

    @property
    def d0(self) -> int:
        return int(np.shape(self.mu0)[-1])

    def dense_w(self, m: int) -> np.ndarray:
        """``W_m`` as a ``d_m x d0`` matrix (single datum only)."""
        w = np.asarray(self.w[m])
        if w.ndim != 1:
            raise ValueError("dense_w needs unbatched parameters")
        d = self.psi_diag[m].shape[-1]
        out = np.zeros((d, w.shape[0]))
        out[np.arange(w.shape[0]), np.arange(w.shape[0])] = w
        return out


def _check_priors(lambda0, lambdas, M):
    if lambda0 <= 0 or any(lam <= 0 for lam in lambdas):
        raise ValueError("prior precisions must be positive")
    if len(lambdas) != M:
        raise ValueError(f"need {M} view precisions, got {len(lambdas)}")


def build_params(moments: PosteriorMoments, lambda0: float, lambdas, mode: str = "multimodal") -> MvLayerParams:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    mom = moments.checked()
    lambdas = [float(x) for x in lambdas]
    _check_priors(lambda0, lambdas, len(mom.mu))
    d0 = mom.d0
    root_p = np.sqrt(mom.p)
    ws, psis = [], []
    for var in mom.var:
        ws.append(np.sqrt(var[..., :d0]) * root_p)
        psi = var.copy()
        psi[..., :d0] = var[..., :d0] * (1.0 - mom.p)
        psis.append(np.maximum(psi, PSI_MIN))
    params = MvLayerParams(ws, psis, [], np.zeros_like(mom.p), float(lambda0), lambdas)
    params.mu0 = solve_mu0_multimodal(mom, params) if mode == "multimodal" else solve_mu0_primary(mom, params)
    for w, mu in zip(ws, mom.mu):
        me = mu.copy()
        me[..., :d0] -= w * params.mu0
        params.mu_eps.append(me)
    return params


def solve_mu0_multimodal(moments: PosteriorMoments, params: MvLayerParams) -> np.ndarray:
    """Mean of the shared factor that minimises the mean-dependent KL terms over all views."""
    d0 = params.d0
    num = 0.0
    den = params.lambda0
    for lam, w, mu in zip(params.lambdas, params.w, moments.mu):
        num = num + lam * w * np.asarray(mu)[..., :d0]
        den = den + lam * w * w
    return num / den


def solve_mu0_primary(moments: PosteriorMoments, params: MvLayerParams) -> np.ndarray:
    """Same as :func:`solve_mu0_multimodal` restricted to the first (primary) view."""
    d0 = params.d0
    lam, w = params.lambdas[0], params.w[0]
    return lam * w * np.asarray(moments.mu[0])[..., :d0] / (params.lambda0 + lam * w * w)


def mu0_closed_form(ws, mus, lambda0: float, lambdas) -> np.ndarray:
    """General dense-loading minimiser ``(l0 I + sum l_m W'W)^-1 sum l_m W' mu``."""
    from .numkit import solve

    d0 = ws[0].shape[1]
    a = lambda0 * np.eye(d0)
    b = np.zeros(d0)
    for w, mu, lam in zip(ws, mus, lambdas):
        a += lam * w.T @ w
        b += lam * w.T @ mu
    return solve(a, b)


def mu0_objective(mu0, ws, mus, lambda0: float, lambdas) -> float:
    """The mean-dependent part of the KL terms, with ``mu_eps_m = mu_m - W_m mu0`` substituted."""
    val = 0.5 * lambda0 * float(mu0 @ mu0)
    for w, mu, lam in zip(ws, mus, lambdas):
        r = mu - w @ mu0
        val += 0.5 * lam * float(r @ r)
    return val


def kl_phi(mu0, lambda0: float, d0: int | None = None):
    """KL( N(mu0, I) || N(0, I / lambda0) ), summed over the last axis."""
    mu0 = np.asarray(mu0, dtype=float)
    d0 = mu0.shape[-1] if d0 is None else d0
    if lambda0 <= 0:
        raise ValueError("lambda0 must be positive")
    return 0.5 * lambda0 * np.sum(mu0 * mu0, axis=-1) + 0.5 * d0 * (lambda0 - np.log(lambda0) - 1.0)


def kl_eps(mu_eps, psi_diag, lambda_m: float):
    """KL( N(mu_eps, diag psi) || N(0, I / lambda_m) ), summed over the last axis."""
    mu_eps = np.asarray(mu_eps, dtype=float)
    psi = np.asarray(psi_diag, dtype=float)
    if lambda_m <= 0 or np.any(psi <= 0):
        raise ValueError("kl_eps needs positive psi and lambda")
    lp = lambda_m * psi
    return 0.5 * lambda_m * np.sum(mu_eps * mu_eps, axis=-1) + 0.5 * np.sum(lp - np.log(lp) - 1.0, axis=-1)


@dataclass
class LatentDraw:
    phi: np.ndarray
    eps: list[np.ndarray]
    z: list[np.ndarray]


def reparameterize(params: MvLayerParams, xi0, xis) -> LatentDraw:
    """Deterministic map from standard-normal noise to a posterior sample."""
    phi = params.mu0 + xi0
    d0 = params.d0
    eps, zs = [], []
    for w, psi, me, xi in zip(params.w, params.psi_diag, params.mu_eps, xis):
        e = me + np.sqrt(psi) * xi
        z = e.copy()
        z[..., :d0] += w * phi
        eps.append(e)
        zs.append(z)
    return LatentDraw(phi, eps, zs)


def sample_latents(params: MvLayerParams, n: int, seed) -> LatentDraw:
    """``n`` reparameterized draws; batched parameters need ``n`` equal to the batch size."""
    rng = np.random.default_rng(seed)
    xi0 = rng.standard_normal((n, params.d0))
    xis = [rng.standard_normal((n, np.shape(psi)[-1])) for psi in params.psi_diag]
    return reparameterize(params, xi0, xis)


# ---------------------------------------------------------------------------
# differentiable layer used by the training objective


@dataclass
class LayerCache:
    moments: PosteriorMoments
    params: MvLayerParams
    draw: LatentDraw
    xis: list
    used: list
    fixed_mu0: bool


def layer_forward(mu, var, p, lambda0, lambdas, mode, xi0, xis, mu0=None):
    """Sample ``z_m`` and evaluate both KL terms, keeping what the backward pass needs.

    ``mu0`` given explicitly switches to the identity-loading baseline:
    ``W_m = I`` and ``p`` is ignored.
    Returns ``(z list, kl_phi per datum, kl_eps list per datum, cache)``.
    """
    fixed = mu0 is not None
    if fixed:
        d0 = mu0.shape[-1]
        if any(v.shape[-1] != d0 for v in var):
            raise ValueError("identity loadings need every view dimension equal to d0")
        moments = PosteriorMoments(mu, var, np.zeros_like(mu0))
        mu_eps = [m - mu0 for m in mu]
        params = MvLayerParams([np.ones_like(mu0) for _ in mu], [np.maximum(v, PSI_MIN) for v in var],
                               mu_eps, mu0, float(lambda0), [float(x) for x in lambdas])
    else:
        moments = PosteriorMoments(mu, var, p)
        params = build_params(moments, lambda0, lambdas, mode)
    draw = reparameterize(params, xi0, xis)
    kphi = kl_phi(params.mu0, params.lambda0)
    keps = [kl_eps(me, psi, lam) for me, psi, lam in zip(params.mu_eps, params.psi_diag, params.lambdas)]
    used = list(range(len(mu))) if mode == "multimodal" else [0]
    return draw.z, kphi, keps, LayerCache(moments, params, draw, list(xis), used, fixed)


def layer_backward(cache: LayerCache, gz, gkphi, gkeps):
    """Vector-Jacobian product of :func:`layer_forward`.

    ``gz`` are gradients w.r.t. each ``z_m``; ``gkphi`` and ``gkeps[m]`` are
    per-datum weights on the KL terms.  Returns gradients for ``(mu, var, p)``,
    or ``(mu, var, mu0)`` in identity-loading mode.
    """
    mom, prm = cache.moments, cache.params
    M = len(mom.mu)
    d0 = prm.d0
    mu0, phi = prm.mu0, cache.draw.phi
    gmu, gvar, gw, gpsi = [], [], [], []
    gmu0 = np.asarray(gkphi)[..., None] * prm.lambda0 * mu0
    for m in range(M):
        lam, w, psi = prm.lambdas[m], prm.w[m], prm.psi_diag[m]
        gk = np.asarray(gkeps[m])[..., None]
        gme = gz[m] + gk * lam * prm.mu_eps[m]
        gps = gz[m] * cache.xis[m] / (2.0 * np.sqrt(psi)) + gk * 0.5 * (lam - 1.0 / psi)
        gpsi.append(gps)
        gzs = gz[m][..., :d0]
        gmu0 = gmu0 + gzs * w - gme[..., :d0] * w
        gw.append(gzs * phi - gme[..., :d0] * mu0)
        gmu.append(gme)
    if cache.fixed_mu0:
        for m in range(M):
            gvar.append(np.where(mom.var[m] > PSI_MIN, gpsi[m], 0.0))
        return gmu, gvar, gmu0
    p = np.asarray(mom.p, dtype=float)
    den = prm.lambda0
    for m in cache.used:
        den = den + prm.lambdas[m] * prm.w[m] ** 2
    # mu0 = num / den
    gnum = gmu0 / den
    gden = -gmu0 * mu0 / den
    for m in cache.used:
        lam, w = prm.lambdas[m], prm.w[m]
        gw[m] = gw[m] + lam * mom.mu[m][..., :d0] * gnum + 2.0 * lam * w * gden
        gmu[m][..., :d0] += lam * w * gnum
    gp = np.zeros_like(p)
    for m in range(M):
        var = np.maximum(mom.var[m], VAR_MIN)
        a = var[..., :d0]
        raw_psi = var.copy()
        raw_psi[..., :d0] = a * (1.0 - p)
        g = np.where(raw_psi > PSI_MIN, gpsi[m], 0.0)
        gv = g.copy()
        gv[..., :d0] = g[..., :d0] * (1.0 - p)
        gp = gp - g[..., :d0] * a
        # w = sqrt(a * p)
        w = np.maximum(prm.w[m], 1e-300)
        gv[..., :d0] += gw[m] * p / (2.0 * w)
        gp = gp + gw[m] * a / (2.0 * w)
        gvar.append(gv)
    return gmu, gvar, gp
