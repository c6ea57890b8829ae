import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from vpcca import evalkit


def blobs(n_per, centers, scale=1.0, seed=0):
    rng = np.random.default_rng(seed)
    centers = np.asarray(centers, dtype=float)
    x = np.vstack([c + scale * rng.standard_normal((n_per, centers.shape[1])) for c in centers])
    y = np.repeat(np.arange(len(centers)), n_per)
    return x, y


def brute_acc(labels, assign):
    la, lb = np.unique(labels), np.unique(assign)
    k = max(la.size, lb.size)
    best = 0
    for perm in itertools.permutations(range(k), lb.size):
        hits = sum(np.sum((assign == b) & (labels == (la[p] if p < la.size else None)))
                   for b, p in zip(lb, perm))
        best = max(best, hits)
    return best / labels.size


def test_perfect_agreement():
    y = np.array([0, 0, 1, 2, 2, 1])
    assert evalkit.nmi(y, y) == 1.0
    assert evalkit.acc(y, y) == 1.0
    assert evalkit.ari(y, y) == pytest.approx(1.0)


def test_uninformative_partition():
    y = np.repeat([0, 1], 50)
    one = np.zeros(100, dtype=int)
    assert evalkit.nmi(y, one) == pytest.approx(0.0, abs=1e-15)
    assert evalkit.ari(y, one) == pytest.approx(0.0, abs=1e-15)
    assert evalkit.acc(y, one) == 0.5


def test_chance_level_ari():
    rng = np.random.default_rng(0)
    y, a = rng.integers(0, 10, 10000), rng.integers(0, 10, 10000)
    assert abs(evalkit.ari(y, a)) <= 0.01
    assert evalkit.nmi(y, a) < 0.01


def test_hungarian_matches_brute_force():
    rng = np.random.default_rng(1)
    for _ in range(100):
        k = int(rng.integers(1, 7))
        n = int(rng.integers(5, 40))
        y = rng.integers(0, k, n)
        a = rng.integers(0, int(rng.integers(1, 7)), n)
        assert evalkit.acc(y, a) == pytest.approx(brute_acc(y, a), abs=1e-12)


@given(st.integers(0, 2 ** 31))
def test_metrics_invariant_to_relabeling(seed):
    rng = np.random.default_rng(seed)
    y, a = rng.integers(0, 4, 60), rng.integers(0, 5, 60)
    py, pa = rng.permutation(4) + 10, rng.permutation(5)
    for f in (evalkit.nmi, evalkit.acc, evalkit.ari):
        assert f(py[y], pa[a]) == pytest.approx(f(y, a), abs=1e-12)
    assert evalkit.nmi(a, y) == pytest.approx(evalkit.nmi(y, a), abs=1e-12)


@given(st.integers(0, 2 ** 31), st.integers(2, 6))
def test_acc_lower_bound_on_balanced_labels(seed, k):
    rng = np.random.default_rng(seed)
    y = np.repeat(np.arange(k), 10)
    a = rng.integers(0, k, y.size)
    assert evalkit.acc(y, a) >= 1 / k - 1e-12


def test_metric_errors():
    with pytest.raises(ValueError):
        evalkit.nmi([], [])
    with pytest.raises(ValueError):
        evalkit.acc([0, 1], [0])


def test_kmeans_exact_fit():
    x = np.random.default_rng(0).standard_normal((5, 2))
    res = evalkit.kmeans(x, 5, 0)
    assert res.inertia == 0.0
    assert sorted(res.assignments) == list(range(5))


def test_kmeans_planted_and_duplicated():
    x, y = blobs(100, [[0, 0], [10, 0]], seed=1)
    res = evalkit.kmeans(x, 2, 3)
    assert evalkit.acc(y, res.assignments) == 1.0
    assert np.all(res.assignments < 2)
    d = np.sum((x - res.centers[res.assignments]) ** 2)
    assert res.inertia == pytest.approx(d)
    dup = evalkit.kmeans(np.vstack([x, x]), 2, 3)
    assert evalkit.acc(np.concatenate([res.assignments, res.assignments]), dup.assignments) == 1.0


def test_kmeans_deterministic_and_errors():
    x, _ = blobs(30, [[0, 0], [5, 5], [0, 5]], seed=2)
    assert np.array_equal(evalkit.kmeans(x, 3, 9).assignments, evalkit.kmeans(x, 3, 9).assignments)
    with pytest.raises(ValueError):
        evalkit.kmeans(x, 0)
    with pytest.raises(ValueError):
        evalkit.kmeans(x[:2], 3)


def test_kmeans_with_repeated_points_keeps_k_clusters():
    x = np.vstack([np.zeros((20, 2)), np.ones((3, 2))])
    res = evalkit.kmeans(x, 3, 0, restarts=2)
    assert res.inertia >= 0 and np.all(res.assignments < 3)


def test_spectral_two_cliques():
    x = np.vstack([np.random.default_rng(0).random((6, 2)) * 0.1, 50 + np.random.default_rng(1).random((6, 2)) * 0.1])
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        res = evalkit.spectral_cluster(x, 2, knn=5)
    assert any("2 connected components" in str(m.message) for m in w)
    assert evalkit.acc(np.repeat([0, 1], 6), res.assignments) == 1.0


@pytest.mark.filterwarnings("ignore:k-NN graph has")
def test_spectral_planted_scaling_and_agreement():
    x, y = blobs(60, [[0, 0], [10, 0], [0, 10]], seed=3)
    a = evalkit.spectral_cluster(x, 3, knn=10, seed=1)
    assert evalkit.acc(y, a.assignments) == 1.0
    b = evalkit.spectral_cluster(x * 37.5, 3, knn=10, seed=1)
    assert np.array_equal(a.assignments, b.assignments)
    km = evalkit.kmeans(x, 3, 1)
    assert evalkit.acc(km.assignments, a.assignments) == 1.0


def test_spectral_cap_falls_back(monkeypatch):
    monkeypatch.setattr(evalkit, "SPECTRAL_CAP", 10)
    x, y = blobs(10, [[0, 0], [10, 0]])
    with pytest.warns(UserWarning, match="spectral cap"):
        res = evalkit.spectral_cluster(x, 2)
    assert evalkit.acc(y, res.assignments) == 1.0


def test_knn_examples():
    x, y = blobs(40, [[0, 0], [12, 0]], seed=4)
    assert evalkit.knn_classify(x, y, x[7:8], 1)[0] == y[7]
    xt, yt = blobs(20, [[0, 0], [12, 0]], seed=5)
    assert evalkit.error_rate(yt, evalkit.knn_classify(x, y, xt, 5)) == 0.0
    perm = np.random.default_rng(0).permutation(y.size)
    assert np.array_equal(evalkit.knn_classify(x[perm], y[perm], xt, 5), evalkit.knn_classify(x, y, xt, 5))


def test_knn_tie_goes_to_nearest():
    xtr = np.array([[0.0], [1.0], [-3.0], [3.5]])
    ytr = np.array([1, 2, 2, 1])
    # k = 3 votes {1: 1, 2: 2}; k = 1 nearest is class 1
    assert evalkit.knn_classify(xtr, ytr, np.array([[0.1]]), 1)[0] == 1
    assert evalkit.knn_classify(xtr, ytr, np.array([[0.1]]), 3)[0] == 2


def test_knn_errors():
    with pytest.raises(ValueError):
        evalkit.knn_classify(np.zeros((0, 2)), np.zeros(0), np.zeros((1, 2)))
    with pytest.raises(ValueError):
        evalkit.knn_classify(np.zeros((3, 2)), np.zeros(3), np.zeros((1, 2)), 2)


def test_pca_and_report():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((500, 3)) * [5.0, 1.0, 0.1]
    z = evalkit.pca(x, 1)
    assert abs(np.corrcoef(z[:, 0], x[:, 0])[0, 1]) > 0.99
    assert evalkit.report({"nmi": 0.5, "k": 3}) == "nmi=0.5\nk=3\n"
