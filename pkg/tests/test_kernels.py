"""The numba loops and the numpy fallback compute the same things."""
import numpy as np
import pytest

from vpcca import _accel, _kernels


def both(name):
    return _kernels.IMPLEMENTATIONS[name]


def test_round_robin_covers_every_pair_once():
    for n in range(1, 12):
        seen = []
        for p, q in _kernels.round_robin(n):
            idx = np.concatenate([p, q])
            assert len(set(idx.tolist())) == idx.size  # disjoint within a round
            seen.extend(zip(p.tolist(), q.tolist()))
        assert sorted(seen) == [(i, j) for i in range(n) for j in range(i + 1, n)]


@pytest.mark.parametrize("n", [1, 2, 5, 16])
def test_eig_paths_agree(n):
    rng = np.random.default_rng(n)
    a = rng.standard_normal((n, n))
    a = a + a.T
    tol = 1e-12 * np.linalg.norm(a)
    outs = []
    for impl in both("jacobi_eig"):
        w = a.copy()
        vt = np.eye(n)
        sweeps, ok = impl(w, vt, tol, 100)
        assert ok
        assert np.allclose(vt @ a @ vt.T, np.diag(np.diag(w)), atol=1e-10)
        outs.append(np.sort(np.diag(w)))
    assert np.allclose(outs[0], outs[1], atol=1e-10)
    assert np.allclose(outs[0], np.linalg.eigvalsh(a), atol=1e-10)


@pytest.mark.parametrize("shape", [(7, 3), (4, 4), (30, 9)])
def test_svd_paths_agree(shape):
    rng = np.random.default_rng(sum(shape))
    a = rng.standard_normal(shape)
    outs = []
    for impl in both("jacobi_svd"):
        g = np.ascontiguousarray(a.T)
        vt = np.eye(shape[1])
        _, ok = impl(g, vt, 1e-13, 100, 0.0)
        assert ok
        gram = g @ g.T
        assert np.allclose(gram - np.diag(np.diag(gram)), 0.0, atol=1e-10)
        outs.append(np.sort(np.sqrt(np.diag(gram))))
    assert np.allclose(outs[0], outs[1], atol=1e-10)
    assert np.allclose(outs[0][::-1], np.linalg.svd(a, compute_uv=False), atol=1e-10)


def test_assign_paths_agree():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((500, 4))
    c = rng.standard_normal((6, 4))
    (l1, d1), (l2, d2) = (impl(x, c) for impl in both("assign"))
    assert np.array_equal(l1, l2)
    assert np.allclose(d1, d2, atol=1e-12)
    brute = ((x[:, None] - c[None]) ** 2).sum(-1)
    assert np.array_equal(l1, brute.argmin(1))


def test_rotate_paths_agree():
    rng = np.random.default_rng(1)
    imgs = rng.uniform(size=(5, 28, 28))
    angles = rng.uniform(-np.pi, np.pi, size=5)
    r1, r2 = (impl(imgs, angles) for impl in both("rotate"))
    assert np.allclose(r1, r2, atol=1e-12)


def test_env_flag_selects_numpy(monkeypatch):
    import subprocess
    import sys

    code = "from vpcca import _kernels, _accel; print(_accel.USE_NUMBA, _kernels.assign.__name__)"
    env = dict(__import__("os").environ, VPCCA_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["False", "_assign_numpy"]
    if _accel.HAVE_NUMBA and not _accel._DISABLED:
        assert _kernels.assign is _kernels.IMPLEMENTATIONS["assign"][0]
