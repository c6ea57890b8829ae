import numpy as np
import pytest
from hypothesis import given, strategies as st

from vpcca import mvlayer
from vpcca.mvlayer import PosteriorMoments, build_params


def moments(rng, dims, d0, n=None):
    lead = () if n is None else (n,)
    mu = [rng.standard_normal(lead + (d,)) for d in dims]
    var = [rng.uniform(0.2, 3.0, size=lead + (d,)) for d in dims]
    p = rng.uniform(0.05, 0.95, size=lead + (d0,))
    return PosteriorMoments(mu, var, p)


def test_zero_correlation():
    rng = np.random.default_rng(0)
    mom = moments(rng, [5, 4], 3)
    mom.p = np.zeros(3)
    prm = build_params(mom, 0.5, [1.0, 2.0])
    for m in range(2):
        assert np.all(prm.w[m] == 0)
        assert np.allclose(prm.psi_diag[m], mom.var[m])
        assert np.allclose(prm.mu_eps[m], mom.mu[m])


def test_perfect_correlation_hits_the_floor():
    mom = PosteriorMoments([np.zeros(3)], [np.ones(3)], np.ones(2))
    prm = build_params(mom, 1.0, [1.0])
    assert np.allclose(prm.dense_w(0)[:2], np.eye(2))
    assert np.allclose(prm.psi_diag[0], [mvlayer.PSI_MIN, mvlayer.PSI_MIN, 1.0])


@given(st.integers(0, 2 ** 31), st.integers(1, 4), st.integers(1, 4))
def test_marginal_covariance_identity(seed, d0, extra):
    rng = np.random.default_rng(seed)
    mom = moments(rng, [d0 + extra, d0], d0)
    prm = build_params(mom, 0.3, [1.0, 1.0])
    for m in range(2):
        w = prm.dense_w(m)
        cov = w @ w.T + np.diag(prm.psi_diag[m])
        assert np.allclose(cov, np.diag(mom.var[m]), rtol=1e-12, atol=0)


def test_sampled_covariance_matches_variances():
    rng = np.random.default_rng(1)
    mom = moments(rng, [4, 3], 2)
    prm = build_params(mom, 0.3, [1.0, 1.0])
    draw = mvlayer.sample_latents(prm, 200000, 2)
    for m in range(2):
        got = np.cov(draw.z[m].T)
        want = np.diag(mom.var[m])
        assert np.allclose(np.diag(got), np.diag(want), rtol=0.02)
        assert np.abs(got - np.diag(np.diag(got))).max() <= 0.02 * want.max()
        se = np.sqrt(mom.var[m] / 200000)
        assert np.all(np.abs(draw.z[m].mean(0) - mom.mu[m]) <= 3 * se + 1e-12) or \
            np.all(np.abs(draw.z[m].mean(0) - mom.mu[m]) <= 4 * se)


def test_mu0_examples():
    v = np.array([1.0, -2.0, 4.0])
    mom = PosteriorMoments([v], [np.ones(3)], np.ones(3))
    prm = build_params(mom, 1.0, [1.0], "multimodal")
    assert np.allclose(prm.mu0, v / 2)
    assert np.allclose(mvlayer.solve_mu0_primary(mom.checked(), prm), v / 2)
    assert np.allclose(mvlayer.mu0_closed_form([np.eye(3)], [v], 1.0, [1.0]), v / 2)


def test_dominant_prior_limit():
    rng = np.random.default_rng(2)
    mom = moments(rng, [4, 4, 3], 3)
    prm = build_params(mom, 1e6, [1.0, 1.0, 1.0])
    bound = 1e-4 * sum(np.linalg.norm(prm.w[m] * mom.mu[m][:3]) for m in range(3))
    assert np.linalg.norm(prm.mu0) <= bound


def test_primary_equals_multimodal_for_one_view():
    rng = np.random.default_rng(3)
    mom = moments(rng, [5], 2)
    a = build_params(mom, 0.7, [2.0], "multimodal")
    b = build_params(mom, 0.7, [2.0], "primary")
    assert np.allclose(a.mu0, b.mu0)


@given(st.integers(0, 2 ** 31), st.integers(1, 4), st.integers(1, 5))
def test_closed_forms_agree_and_dominate(seed, M, d0):
    rng = np.random.default_rng(seed)
    mom = moments(rng, [d0 + 1] * M, d0)
    lam0 = float(rng.uniform(0.1, 2))
    lams = list(rng.uniform(0.1, 2, size=M))
    multi = build_params(mom, lam0, lams, "multimodal")
    prim = build_params(mom, lam0, lams, "primary")
    ws = [multi.dense_w(m) for m in range(M)]
    dense = mvlayer.mu0_closed_form(ws, mom.mu, lam0, lams)
    assert np.allclose(dense, multi.mu0, atol=1e-12)
    assert np.allclose(mvlayer.mu0_closed_form(ws[:1], mom.mu[:1], lam0, lams[:1]), prim.mu0, atol=1e-12)
    f = lambda mu0: mvlayer.mu0_objective(mu0, ws, mom.mu, lam0, lams)
    assert f(multi.mu0) <= f(prim.mu0) + 1e-12


def test_kl_examples():
    assert mvlayer.kl_phi(np.zeros(3), 1.0) == 0.0
    assert mvlayer.kl_phi(np.array([1.0, 0.0]), 1.0, 2) == pytest.approx(0.5)
    assert mvlayer.kl_eps(np.zeros(4), np.full(4, 0.5), 2.0) == pytest.approx(0.0, abs=1e-15)
    assert mvlayer.kl_eps(np.zeros(1), np.array([2.0]), 1.0) == pytest.approx(0.5 * (2 - np.log(2) - 1))
    assert mvlayer.kl_eps(np.zeros(1), np.array([2.0]), 1.0) == pytest.approx(0.15343, abs=1e-5)
    with pytest.raises(ValueError):
        mvlayer.kl_eps(np.zeros(1), np.zeros(1), 1.0)
    with pytest.raises(ValueError):
        mvlayer.kl_phi(np.zeros(1), 0.0)


@given(st.integers(0, 2 ** 31))
def test_kl_nonnegative(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 8))
    assert mvlayer.kl_phi(rng.standard_normal(d), float(rng.uniform(0.01, 10))) >= 0
    assert mvlayer.kl_eps(rng.standard_normal(d), rng.uniform(1e-6, 10, d), float(rng.uniform(0.01, 10))) >= 0


def test_kl_batched_matches_rows():
    rng = np.random.default_rng(4)
    mu = rng.standard_normal((6, 3))
    psi = rng.uniform(0.1, 2, (6, 3))
    rows = [mvlayer.kl_eps(mu[i], psi[i], 0.7) for i in range(6)]
    assert np.allclose(mvlayer.kl_eps(mu, psi, 0.7), rows)


def test_kl_additivity_against_joint_monte_carlo():
    rng = np.random.default_rng(5)
    mom = moments(rng, [3, 2], 2)
    prm = build_params(mom, 0.5, [2.0, 0.8])
    total = mvlayer.kl_phi(prm.mu0, 0.5) + sum(mvlayer.kl_eps(prm.mu_eps[m], prm.psi_diag[m], lam)
                                               for m, lam in enumerate([2.0, 0.8]))
    draw = mvlayer.sample_latents(prm, 400000, 6)

    def logn(x, mean, var):
        return -0.5 * np.sum(np.log(2 * np.pi * var) + (x - mean) ** 2 / var, axis=-1)

    lq = logn(draw.phi, prm.mu0, 1.0) - logn(draw.phi, 0.0, 1 / 0.5)
    for m, lam in enumerate([2.0, 0.8]):
        lq = lq + logn(draw.eps[m], prm.mu_eps[m], prm.psi_diag[m]) - logn(draw.eps[m], 0.0, 1 / lam)
    se = lq.std() / np.sqrt(lq.size)
    assert abs(lq.mean() - total) <= 4 * se


def test_collapsed_posterior_is_nearly_deterministic():
    mu = [np.array([1.0, 2.0, 3.0])]
    mom = PosteriorMoments(mu, [np.full(3, 1e-7)], np.zeros(2))
    prm = build_params(mom, 1.0, [1.0])
    draw = mvlayer.sample_latents(prm, 1000, 0)
    assert np.abs(draw.z[0] - mu[0]).max() <= 6 * np.sqrt(mvlayer.PSI_MIN)


def test_latent_draw_structure_and_determinism():
    rng = np.random.default_rng(7)
    prm = build_params(moments(rng, [4, 3], 2, n=5), 0.5, [1.0, 1.0])
    a = mvlayer.sample_latents(prm, 5, 9)
    b = mvlayer.sample_latents(prm, 5, 9)
    for m in range(2):
        assert np.array_equal(a.z[m], b.z[m])
        z = a.eps[m].copy()
        z[:, :2] += prm.w[m] * a.phi
        assert np.array_equal(z, a.z[m])


def test_bad_inputs():
    mom = PosteriorMoments([np.zeros(2)], [np.ones(2)], np.array([1.5]))
    with pytest.raises(ValueError):
        build_params(mom, 1.0, [1.0])
    mom = PosteriorMoments([np.zeros(1)], [np.ones(1)], np.array([0.5, 0.5]))
    with pytest.raises(ValueError):
        build_params(mom, 1.0, [1.0])
    mom = PosteriorMoments([np.zeros(2)], [np.ones(3)], np.array([0.5]))
    with pytest.raises(ValueError):
        build_params(mom, 1.0, [1.0])
    with pytest.raises(ValueError):
        build_params(PosteriorMoments([np.zeros(2)], [np.ones(2)], np.array([0.5])), 1.0, [1.0, 2.0])
    with pytest.raises(ValueError):
        build_params(PosteriorMoments([np.zeros(2)], [np.ones(2)], np.array([0.5])), 1.0, [1.0], "both")


def _fd_check(fn, args, grads, h=1e-6):
    worst = 0.0
    for arr, g in zip(args, grads):
        for i in np.ndindex(arr.shape):
            old = arr[i]
            arr[i] = old + h
            fp = fn()
            arr[i] = old - h
            fm = fn()
            arr[i] = old
            fd = (fp - fm) / (2 * h)
            worst = max(worst, abs(fd - g[i]) / max(abs(fd), abs(g[i]), 1e-3))
    return worst


@pytest.mark.parametrize("mode,fixed", [("multimodal", False), ("primary", False), ("multimodal", True)])
def test_layer_pathwise_gradients(mode, fixed):
    rng = np.random.default_rng(8)
    n, d0 = 3, 2
    dims = [d0, d0] if fixed else [4, 3]
    mu = [rng.standard_normal((n, d)) for d in dims]
    var = [rng.uniform(0.3, 2.0, (n, d)) for d in dims]
    p = rng.uniform(0.1, 0.9, (n, d0))
    mu0 = rng.standard_normal((n, d0)) if fixed else None
    xi0 = rng.standard_normal((n, d0))
    xis = [rng.standard_normal((n, d)) for d in dims]
    cz = [rng.standard_normal((n, d)) for d in dims]
    ck = rng.uniform(0.5, 1.5, n)

    def loss():
        zs, kphi, keps, _ = mvlayer.layer_forward(mu, var, p, 0.4, [1.5, 0.6], mode, xi0, xis, mu0=mu0)
        return sum(np.sum(c * z) for c, z in zip(cz, zs)) + np.sum(ck * kphi) + sum(np.sum(ck * k) for k in keps)

    *_, cache = mvlayer.layer_forward(mu, var, p, 0.4, [1.5, 0.6], mode, xi0, xis, mu0=mu0)
    gmu, gvar, third = mvlayer.layer_backward(cache, cz, ck, [ck, ck])
    args = [*mu, *var, mu0 if fixed else p]
    grads = [*gmu, *gvar, third]
    assert _fd_check(loss, args, grads) <= 1e-5
