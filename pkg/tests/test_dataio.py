import math
import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from vpcca import dataio, evalkit, pcca
from vpcca.dataio import FormatError, MultiViewBatch


def idx_bytes(magic, dims, payload):
    return struct.pack(">I", magic) + struct.pack(f">{len(dims)}I", *dims) + np.asarray(list(payload), dtype=np.uint8).tobytes()


def test_idx_images_example(tmp_path):
    payload = np.arange(2 * 784) % 256
    (tmp_path / "img").write_bytes(idx_bytes(0x803, (2, 28, 28), payload))
    (tmp_path / "lab").write_bytes(idx_bytes(0x801, (2,), [3, 7]))
    batch = dataio.load_idx(tmp_path / "img", tmp_path / "lab")
    assert batch.views[0].shape == (2, 784)
    assert np.allclose(batch.views[0].ravel() * 255, payload)
    assert list(batch.labels) == [3, 7]
    assert batch.views[0].min() >= 0 and batch.views[0].max() <= 1


def test_idx_labels_example(tmp_path):
    (tmp_path / "lab").write_bytes(bytes([0, 0, 8, 1, 0, 0, 0, 2, 5, 9]))
    assert list(dataio.read_idx(tmp_path / "lab", dataio.IDX_LABELS_MAGIC)) == [5, 9]


@given(st.integers(0, 2 ** 31), st.integers(1, 3))
def test_idx_byte_round_trip(tmp_path_factory, seed, rank):
    rng = np.random.default_rng(seed)
    shape = tuple(int(s) for s in rng.integers(1, 6, size=rank))
    arr = rng.integers(0, 256, size=shape).astype(np.uint8)
    path = tmp_path_factory.mktemp("idx") / "a.idx"
    dataio.write_idx(path, arr)
    raw = path.read_bytes()
    assert raw == idx_bytes(0x800 | rank, shape, arr.ravel())
    back = dataio.read_idx(path)
    assert np.array_equal(back, arr)
    dataio.write_idx(path, back)
    assert path.read_bytes() == raw


def test_idx_errors(tmp_path):
    (tmp_path / "bad").write_bytes(idx_bytes(0x801, (2,), [1, 2]))
    with pytest.raises(FormatError, match="magic"):
        dataio.read_idx(tmp_path / "bad", dataio.IDX_IMAGES_MAGIC)
    (tmp_path / "short").write_bytes(idx_bytes(0x803, (2, 2, 2), [1, 2, 3]))
    with pytest.raises(FormatError, match="truncated"):
        dataio.read_idx(tmp_path / "short")
    (tmp_path / "img").write_bytes(idx_bytes(0x803, (2, 2, 2), range(8)))
    (tmp_path / "lab").write_bytes(idx_bytes(0x801, (3,), [0, 1, 2]))
    with pytest.raises(FormatError):
        dataio.load_idx(tmp_path / "img", tmp_path / "lab")


def test_rotation_examples():
    rng = np.random.default_rng(0)
    img = rng.random((28, 28))
    assert np.allclose(dataio.rotate_image(img, 0.0), img, atol=1e-12)
    const = np.full((28, 28), 0.3)
    out = dataio.rotate_image(const, 0.7)
    yy, xx = np.mgrid[:28, :28]
    r = np.hypot(yy - 13.5, xx - 13.5)
    interior = r < 14 - math.sqrt(2) * 1.0
    assert np.allclose(out[interior], 0.3, atol=1e-12)
    with pytest.raises(ValueError):
        dataio.rotate_image(img, 4.0)


def test_rotation_inverse_is_close_on_smooth_images():
    yy, xx = np.mgrid[:28, :28]
    img = np.exp(-((yy - 13.5) ** 2 + (xx - 12) ** 2) / 30.0)
    for theta in (0.3, -0.7, math.pi / 4):
        back = dataio.rotate_image(dataio.rotate_image(img, theta), -theta)
        interior = np.hypot(yy - 13.5, xx - 13.5) < 14 - math.sqrt(2) * 14 / 2
        assert np.abs(back - img)[interior].mean() <= 0.02


def test_rotation_quarter_turn_is_exact_permutation():
    img = np.random.default_rng(1).random((28, 28))
    out = dataio.rotate_image(img, math.pi / 2)
    assert np.allclose(np.sort(out.ravel()), np.sort(img.ravel()), atol=1e-9)


def toy_digits(n=200, seed=0, zero_class=None):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 4, n)
    imgs = rng.random((n, 64)) * 0.5
    if zero_class is not None:
        imgs[labels == zero_class] = 0.0
    return MultiViewBatch([imgs], labels)


def test_make_two_view_properties():
    base = toy_digits()
    out = dataio.make_two_view(base, 3)
    assert out.M == 2 and out.n == base.n
    assert np.array_equal(base.labels[out.sources], out.labels)
    for v in out.views:
        assert v.min() >= 0.0 and v.max() <= 1.0
    again = dataio.make_two_view(base, 3)
    assert all(np.array_equal(a, b) for a, b in zip(out.views, again.views))
    other = dataio.make_two_view(base, 4)
    assert not np.array_equal(other.sources, out.sources)
    assert np.array_equal(np.bincount(base.labels[other.sources]), np.bincount(base.labels[out.sources]))


def test_make_two_view_noise_is_uniform():
    base = toy_digits(400, zero_class=2)
    out = dataio.make_two_view(base, 5)
    rows = out.labels == 2
    pix = out.views[1][rows].ravel()[:10000]
    assert pix.size == 10000 or rows.sum() * 64 == pix.size
    assert stats.kstest(pix, "uniform").pvalue > 0.01


def test_make_two_view_errors():
    base = toy_digits()
    with pytest.raises(ValueError):
        dataio.make_two_view(MultiViewBatch([base.views[0]]), 0)
    pool = base.subset(np.flatnonzero(base.labels != 1))
    with pytest.raises(ValueError, match="class 1"):
        dataio.make_two_view(base, 0, pool=pool)


def test_batch_validation():
    with pytest.raises(ValueError):
        MultiViewBatch([np.zeros((3, 2)), np.zeros((4, 2))])
    with pytest.raises(ValueError):
        MultiViewBatch([np.full((3, 2), 2.0)], None, [(0.0, 1.0)])


def test_container_round_trip(tmp_path):
    recs = {"a": np.arange(6.0).reshape(2, 3), "é": np.float32([1.5, -2.0]), "s": np.array(3.0),
            "empty": np.zeros((0, 4))}
    path = tmp_path / "c.mvt"
    dataio.write_container(path, recs)
    back = dataio.read_container(path)
    assert list(back) == list(recs)
    for k in recs:
        assert back[k].shape == recs[k].shape
        assert back[k].dtype == (np.float32 if recs[k].dtype == np.float32 else np.float64)
        assert np.array_equal(back[k], recs[k])
    raw = path.read_bytes()
    dataio.write_container(path, back)
    assert path.read_bytes() == raw


def test_container_layout(tmp_path):
    path = tmp_path / "c.mvt"
    dataio.write_container(path, {"x": np.array([1.0])})
    assert path.read_bytes() == b"MVT1" + struct.pack("<II", 1, 1) + b"x" + struct.pack("<II", 1, 1) + b"\x08" \
        + struct.pack("<d", 1.0)


def test_container_errors(tmp_path):
    path = tmp_path / "c.mvt"
    dataio.write_container(path, {"x": np.arange(4.0)})
    raw = path.read_bytes()
    (tmp_path / "t").write_bytes(raw[:-3])
    with pytest.raises(FormatError, match="truncated"):
        dataio.read_container(tmp_path / "t")
    (tmp_path / "m").write_bytes(b"MVT2" + raw[4:])
    with pytest.raises(FormatError, match="magic"):
        dataio.read_container(tmp_path / "m")
    (tmp_path / "e").write_bytes(raw + b"\x00")
    with pytest.raises(FormatError, match="trailing"):
        dataio.read_container(tmp_path / "e")


def test_batch_round_trip(tmp_path):
    b = toy_digits(20)
    dataio.save_batch(tmp_path / "b.mvt", b)
    back = dataio.load_batch(tmp_path / "b.mvt")
    assert np.array_equal(back.views[0], b.views[0]) and np.array_equal(back.labels, b.labels)


def test_gen_synthetic_single_cluster_is_plain_sampling():
    model = pcca.random_model([4, 3], [0.8, 0.4], 0)
    a = dataio.gen_synthetic(dataio.StructuredPhi(model, 1, 0.0), 50, 7)
    b = pcca.sample_generative(model, 50, 7)
    assert all(np.array_equal(x, y) for x, y in zip(a.views, b.views))
    c = dataio.gen_synthetic(model, 50, 7)
    assert all(np.array_equal(x, y) for x, y in zip(a.views, c.views))


def test_gen_synthetic_planted_clusters():
    model = pcca.random_model([5, 5], [0.9, 0.6], 1)
    spec = dataio.StructuredPhi(model, 3, 10.0, seed=2)
    batch = dataio.gen_synthetic(spec, 600, 3)
    c = spec.centroids()
    d = np.linalg.norm(c[:, None] - c[None], axis=2)
    assert d[~np.eye(3, dtype=bool)].min() >= 10.0 - 1e-9
    # recover the shared factor from the generating draw
    rng = np.random.default_rng(3)
    phi = model.mu0 + rng.standard_normal((600, model.d0)) + c[batch.labels]
    res = evalkit.kmeans(phi, 3, 0)
    assert evalkit.acc(batch.labels, res.assignments) == 1.0
    again = dataio.gen_synthetic(spec, 600, 3)
    assert np.array_equal(again.views[0], batch.views[0])
    assert np.array_equal(spec.centroids(), c)


def test_gen_synthetic_rejects_close_clusters():
    model = pcca.random_model([3, 3], [0.5], 0)
    with pytest.raises(ValueError):
        dataio.gen_synthetic(dataio.StructuredPhi(model, 3, 2.0), 10, 0)


def test_many_centroids_are_separated():
    model = pcca.random_model([3, 3], [0.5, 0.4], 0)
    c = dataio.StructuredPhi(model, 5, 8.0, seed=4).centroids()
    d = np.linalg.norm(c[:, None] - c[None], axis=2)
    assert d[~np.eye(5, dtype=bool)].min() >= 8.0
