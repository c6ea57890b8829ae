"""Two-view noisy-digit experiment at desk scale.

    python scripts/desk_experiment.py IMAGES_IDX LABELS_IDX [--split 10000,2000,2000] [--epochs 30]

Builds the (rotated digit, noisy same-class digit) views, trains one model
whose shared mean uses the primary view only and one that fuses both views,
then compares k-means NMI and k-NN error of their shared embeddings with a
10-D PCA baseline of the raw primary view.
"""
from __future__ import annotations

import argparse
import json
import time

import numpy as np

from vpcca import dataio, evalkit, train
from vpcca.cli import derive_seed

KNN_CHOICES = (1, 5, 15)


def moving_average_non_decreasing(values, window=5, slack=0.0) -> bool:
    v = np.asarray(values, dtype=float)
    if v.size < window:
        return bool(np.all(np.diff(v) >= -slack))
    ma = np.convolve(v, np.ones(window) / window, mode="valid")
    return bool(np.all(np.diff(ma) >= -slack))


def make_splits(images, labels, split, seed):
    base = dataio.load_idx(images, labels)
    if sum(split) > base.n:
        raise ValueError(f"split {split} needs {sum(split)} rows, the input has {base.n}")
    order = np.random.default_rng(derive_seed("make-views/split", seed)).permutation(base.n)
    out, start = [], 0
    for name, size in zip(("train", "val", "test"), split):
        out.append(dataio.make_two_view(base.subset(order[start:start + size]),
                                        derive_seed(f"make-views/{name}", seed)))
        start += size
    return out


def cluster_nmi(points, labels, seed):
    return evalkit.nmi(labels, evalkit.kmeans(points, 10, seed, restarts=10).assignments)


def knn_error(train_x, train_y, val_x, val_y, test_x, test_y):
    """k chosen on the validation split, error reported on the test split."""
    best = min(KNN_CHOICES, key=lambda k: (evalkit.error_rate(val_y, evalkit.knn_classify(train_x, train_y, val_x, k)), k))
    return evalkit.error_rate(test_y, evalkit.knn_classify(train_x, train_y, test_x, best)), best


def run_protocol(images, labels, split=(10000, 2000, 2000), epochs=30, hidden=256, d0=10, dm=20, seed=0,
                 progress=None, modes=("primary", "multimodal"), **overrides):
    """Returns a dict of measurements plus the pass flags ``a``, ``b`` and ``c``.

    ``overrides`` replace entries of the training configuration.
    """
    t0 = time.time()
    tr, va, te = make_splits(images, labels, split, seed)
    base = dict(d0=d0, latent_dims=(dm,), enc_hidden=(hidden,) * 3, dec_hidden=(hidden,) * 3,
                likelihoods=("bernoulli", "gaussian"), lambda0=0.01, lambdas=(1.0,), epochs=epochs,
                batch_size=200, lr=2e-4, weight_decay=1e-4, dropout=0.0, dtype="float32",
                seed=derive_seed("train", seed))
    base.update(overrides)
    results = {}
    models = {}
    for mode in modes:
        cfg = train.TrainConfig(mu0_mode=mode, **base)
        res = train.train_model(tr, va, cfg, log=progress)
        vals = [v.total for _, v in res.history]
        models[mode] = res.model
        results[f"{mode}_val_elbo"] = vals
        results[f"{mode}_val_ma_ok"] = moving_average_non_decreasing(vals)
    cseed = derive_seed("eval/cluster", seed)
    pca_te = evalkit.pca(te.views[0], d0, fit_on=tr.views[0])
    results["pca_nmi"] = cluster_nmi(pca_te, te.labels, cseed)
    for mode in modes:
        model = models[mode]
        emb = {name: train.embed(model, b.views, mode) for name, b in (("tr", tr), ("va", va), ("te", te))}
        results[f"{mode}_nmi"] = cluster_nmi(emb["te"], te.labels, cseed)
        err, k = knn_error(emb["tr"], tr.labels, emb["va"], va.labels, emb["te"], te.labels)
        results[f"{mode}_knn_error"] = err
        results[f"{mode}_knn_k"] = k
    if set(modes) == {"primary", "multimodal"}:
        results["a"] = results["primary_val_ma_ok"] and results["multimodal_val_ma_ok"]
        results["b"] = results["primary_nmi"] - results["pca_nmi"] >= 0.05
        results["c"] = (results["multimodal_nmi"] >= results["primary_nmi"] - 0.01
                        and results["multimodal_knn_error"] <= results["primary_knn_error"] + 0.005)
    results["seconds"] = time.time() - t0
    return results


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("images")
    parser.add_argument("labels")
    parser.add_argument("--split", default="10000,2000,2000")
    parser.add_argument("--epochs", type=int, default=30)
    parser.add_argument("--hidden", type=int, default=256)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    split = tuple(int(v) for v in args.split.split(","))
    res = run_protocol(args.images, args.labels, split, args.epochs, args.hidden, seed=args.seed, progress=print)
    print(json.dumps({k: v for k, v in res.items()}, indent=1, default=float))


if __name__ == "__main__":
    main()
