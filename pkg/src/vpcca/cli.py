"""Command-line entry point: ``python -m vpcca <command> [flags]``.

Configuration is a flat ``key=value`` file (``#`` starts a comment) plus
``--set key=value`` overrides.  Every training option is addressable by its
dotted key (see :data:`vpcca.train.CONFIG_KEYS`); the keys below select
inputs and command options.  ``run.seed`` (or ``--seed``) is the master seed;
each command derives its own stream from it.
"""
from __future__ import annotations

import argparse
import hashlib
import itertools
import shutil
import sys
from pathlib import Path

import numpy as np

from . import dataio, evalkit, pcca, train
from ._accel import set_num_threads

CLI_KEYS = {
    "data.train": "",
    "data.val": "",
    "data.test": "",
    "data.images": "",
    "data.labels": "",
    "data.split": "10000,2000,2000",
    "data.checkpoint": "",
    "data.embeddings": "",
    "data.train_embeddings": "",
    "synth.n": "10000",
    "synth.dims": "5,5",
    "synth.p": "0.9,0.5",
    "synth.k": "1",
    "synth.separation": "10",
    "synth.model": "",
    "synth.split": "",
    "embed.mode": "primary",
    "eval.k": "0",
    "eval.method": "kmeans",
    "eval.graph_knn": "10",
    "eval.knn": "1",
    "eval.restarts": "10",
    "grid.metric": "val_elbo",
    "grid.mode": "primary",
}
KNOWN_KEYS = set(CLI_KEYS) | set(train.CONFIG_KEYS)
COMMANDS = ("gen-synth", "make-views", "fit-linear", "train", "embed", "sample", "eval", "grid")


class CliError(Exception):
    pass


def derive_seed(purpose: str, master: int) -> int:
    digest = hashlib.sha256(f"{purpose}\0{int(master)}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def parse_config_text(text: str, origin: str = "config") -> dict[str, str]:
    items = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{origin}:{lineno}: expected key=value")
        key, _, value = line.partition("=")
        items[key.strip()] = value.strip()
    return items


def build_run_config(args) -> dict[str, str]:
    items = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise CliError(f"config file {path} not found")
        items.update(parse_config_text(path.read_text(), str(path)))
    for entry in args.set or []:
        if "=" not in entry:
            raise CliError(f"--set expects key=value, got {entry!r}")
        key, _, value = entry.partition("=")
        items[key.strip()] = value.strip()
    unknown = sorted(set(items) - KNOWN_KEYS)
    if unknown:
        raise CliError(f"unknown configuration key(s): {', '.join(unknown)}")
    if args.seed is not None:
        items["run.seed"] = str(args.seed)
    return items


def _get(items, key):
    return items.get(key, CLI_KEYS.get(key, ""))


def _require_file(items, key) -> Path:
    value = _get(items, key)
    if not value:
        raise CliError(f"{key} is required")
    path = Path(value)
    if not path.exists():
        raise CliError(f"{key}: {path} does not exist")
    return path


def _master(items) -> int:
    return int(items.get("run.seed", "0"))


def train_config(items, purpose="train") -> train.TrainConfig:
    sub = {k: v for k, v in items.items() if k in train.CONFIG_KEYS}
    sub["run.seed"] = str(derive_seed(purpose, _master(items)))
    try:
        return train.TrainConfig.from_mapping(sub)
    except (KeyError, ValueError) as exc:
        raise CliError(str(exc)) from None


class Outputs:
    """Tracks files and directories written by a command so a failure can remove them."""

    def __init__(self, root: Path):
        self.root = root
        self.created: list[Path] = []

    def path(self, name: str) -> Path:
        p = self.root / name
        if not p.exists():
            self.created.append(p)
        return p

    def cleanup(self):
        for p in reversed(self.created):
            if p.is_dir():
                shutil.rmtree(p, ignore_errors=True)
            elif p.exists():
                p.unlink()


def _write_text(path: Path, text: str):
    path.write_text(text)


# ---------------------------------------------------------------------------
# commands


def cmd_gen_synth(items, out: Outputs):
    master = _master(items)
    n = int(_get(items, "synth.n"))
    model_path = _get(items, "synth.model")
    if model_path:
        model = pcca.model_from_records(dataio.read_container(_require_file(items, "synth.model")))
    else:
        dims = train._ints(_get(items, "synth.dims"))
        p = train._floats(_get(items, "synth.p"))
        model = pcca.random_model(dims, p, derive_seed("gen-synth/model", master))
    spec = dataio.StructuredPhi(model, int(_get(items, "synth.k")), float(_get(items, "synth.separation")),
                                derive_seed("gen-synth/centroids", master))
    split = train._ints(_get(items, "synth.split"))
    if split and (len(split) != 3 or min(split) < 1):
        raise CliError("synth.split needs three positive sizes: train,val,test")
    parts = zip(("train", "val", "test"), split) if split else [("data", n)]
    lines = []
    for name, size in parts:
        batch = dataio.gen_synthetic(spec, size, derive_seed(f"gen-synth/{name}", master))
        dataio.save_batch(out.path(f"{name}.mvt"), batch)
        lines.append(f"{name}_rows={size}\n")
    records = pcca.model_records(model)
    dataio.write_container(out.path("model.mvt"), records)
    dataio.write_manifest(out.path("model.manifest.txt"), records)
    return "".join(lines) + f"views={model.M}\n"


def cmd_make_views(items, out: Outputs):
    images = _require_file(items, "data.images")
    labels = _require_file(items, "data.labels")
    sizes = train._ints(_get(items, "data.split"))
    if len(sizes) != 3 or min(sizes) < 1:
        raise CliError("data.split needs three positive sizes: train,val,test")
    base = dataio.load_idx(images, labels)
    if sum(sizes) > base.n:
        raise CliError(f"data.split asks for {sum(sizes)} rows, the input has {base.n}")
    master = _master(items)
    order = np.random.default_rng(derive_seed("make-views/split", master)).permutation(base.n)
    start = 0
    lines = []
    for name, size in zip(("train", "val", "test"), sizes):
        part = base.subset(order[start:start + size])
        start += size
        views = dataio.make_two_view(part, derive_seed(f"make-views/{name}", master))
        dataio.save_batch(out.path(f"{name}.mvt"), views)
        lines.append(f"{name}_rows={size}\n")
    return "".join(lines)


def cmd_fit_linear(items, out: Outputs):
    data = dataio.load_batch(_require_file(items, "data.train"))
    d0 = int(items.get("model.d0", train.TrainConfig.d0))
    if data.M == 2:
        model = pcca.fit_pcca_ml(data.views[0], data.views[1], d0)
    else:
        model = pcca.fit_mv_ml(data.views, d0)
    records = pcca.model_records(model)
    dataio.write_container(out.path("linear.mvt"), records)
    dataio.write_manifest(out.path("linear.manifest.txt"), records)
    lines = [f"p_{i + 1}={v:.9g}\n" for i, v in enumerate(model.p)]
    lines.append(f"n_clipped={model.n_clipped}\n")
    lines.append(f"loglik={pcca.log_likelihood(model, data):.9g}\n")
    text = "".join(lines)
    _write_text(out.path("report.txt"), text)
    return text


def cmd_train(items, out: Outputs):
    tr = dataio.load_batch(_require_file(items, "data.train"))
    va = dataio.load_batch(_require_file(items, "data.val"))
    config = train_config(items)
    log_path = out.path("train.log")
    with open(log_path, "w") as fh:
        try:
            result = train.train_model(tr, va, config, log=lambda line: fh.write(line + "\n"))
        except train.TrainingDiverged as exc:
            train.save_checkpoint(out.path("checkpoint"), exc.result.model)
            raise CliError(f"{exc}; best checkpoint kept") from None
    train.save_checkpoint(out.path("checkpoint"), result.model)
    return f"best_epoch={result.best_epoch}\nbest_val_elbo={result.best_val:.9g}\n"


def cmd_embed(items, out: Outputs):
    model = train.load_checkpoint(_require_file(items, "data.checkpoint"))
    data = dataio.load_batch(_require_file(items, "data.test"))
    mode = _get(items, "embed.mode")
    views = list(data.views) + [None] * (model.M - data.M) if data.M < model.M else data.views
    emb = train.embed(model, views, mode)
    records = {"embedding": emb}
    if data.labels is not None:
        records["labels"] = data.labels.astype(np.float64)
    dataio.write_container(out.path("embeddings.mvt"), records)
    return f"rows={emb.shape[0]}\ndims={emb.shape[1]}\n"


def cmd_sample(items, out: Outputs):
    model = train.load_checkpoint(_require_file(items, "data.checkpoint"))
    data = dataio.load_batch(_require_file(items, "data.test"))
    draws = train.sample_observations(model, data.views, derive_seed("sample", _master(items)))
    dataio.write_container(out.path("samples.mvt"), {f"view{m}": d for m, d in enumerate(draws)})
    return f"rows={data.n}\n"


def _load_embeddings(path):
    rec = dataio.read_container(path)
    labels = rec.get("labels")
    return rec, None if labels is None else labels.astype(np.int64)


def evaluate_embeddings(items, rec, labels, train_rec=None, train_labels=None) -> dict:
    if labels is None:
        raise CliError("evaluation needs labels in the embeddings container")
    master = _master(items)
    metrics = {}
    if "assignments" in rec:
        assign = rec["assignments"].astype(np.int64)
    else:
        k = int(_get(items, "eval.k")) or int(np.unique(labels).size)
        method = _get(items, "eval.method")
        seed = derive_seed("eval/cluster", master)
        restarts = int(_get(items, "eval.restarts"))
        if method == "kmeans":
            res = evalkit.kmeans(rec["embedding"], k, seed, restarts)
        elif method == "spectral":
            res = evalkit.spectral_cluster(rec["embedding"], k, int(_get(items, "eval.graph_knn")), seed, restarts)
        else:
            raise CliError(f"eval.method must be kmeans or spectral, got {method!r}")
        assign = res.assignments
    metrics["nmi"] = evalkit.nmi(labels, assign)
    metrics["acc"] = evalkit.acc(labels, assign)
    metrics["ari"] = evalkit.ari(labels, assign)
    if train_rec is not None:
        if train_labels is None:
            raise CliError("the training embeddings need labels for classification")
        k = int(_get(items, "eval.knn"))
        pred = evalkit.knn_classify(train_rec["embedding"], train_labels, rec["embedding"], k)
        metrics["knn_error"] = evalkit.error_rate(labels, pred)
    return metrics


def cmd_eval(items, out: Outputs):
    rec, labels = _load_embeddings(_require_file(items, "data.embeddings"))
    train_rec = train_labels = None
    if _get(items, "data.train_embeddings"):
        train_rec, train_labels = _load_embeddings(_require_file(items, "data.train_embeddings"))
    text = evalkit.report(evaluate_embeddings(items, rec, labels, train_rec, train_labels))
    _write_text(out.path("metrics.txt"), text)
    return text


def expand_grid(items) -> list[dict[str, str]]:
    """Cartesian product over values written as ``a|b|c``, in lexicographic key order."""
    keys = sorted(items)
    choices = [items[k].split("|") for k in keys]
    return [dict(zip(keys, combo)) for combo in itertools.product(*choices)]


def _describe(combo, varying) -> str:
    return " ".join(f"{k}={combo[k]}" for k in varying)


def cmd_grid(items, out: Outputs):
    """Train every configuration and rank them on the validation split.

    ``grid.metric`` is ``val_elbo`` or a clustering metric (``nmi``, ``acc``,
    ``ari``) of the validation embeddings; higher is better.  Ties are broken
    by the configuration text.
    """
    combos = expand_grid(items)
    varying = sorted(k for k in items if "|" in items[k])
    metric = _get(items, "grid.metric")
    if metric not in ("val_elbo", "nmi", "acc", "ari"):
        raise CliError(f"grid.metric must be val_elbo, nmi, acc or ari, got {metric!r}")
    tr = dataio.load_batch(_require_file(items, "data.train"))
    va = dataio.load_batch(_require_file(items, "data.val"))
    configs = [train_config(c) for c in combos]
    rows = []
    for combo, config in zip(combos, configs):
        result = train.train_model(tr, va, config)
        if metric == "val_elbo":
            value = result.best_val
        else:
            emb = train.embed(result.model, va.views, _get(combo, "grid.mode"))
            value = evaluate_embeddings(combo, {"embedding": emb}, va.labels)[metric]
        rows.append((value, _describe(combo, varying)))
    rows.sort(key=lambda r: (-r[0], r[1]))
    lines = [f"{metric}\tconfig\n"] + [f"{v:.9g}\t{desc}\n" for v, desc in rows]
    text = "".join(lines)
    _write_text(out.path("grid.tsv"), text)
    return text


HANDLERS = {
    "gen-synth": cmd_gen_synth,
    "make-views": cmd_make_views,
    "fit-linear": cmd_fit_linear,
    "train": cmd_train,
    "embed": cmd_embed,
    "sample": cmd_sample,
    "eval": cmd_eval,
    "grid": cmd_grid,
}


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vpcca", description="Deep probabilistic CCA toolkit")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="key=value configuration file")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a configuration key")
    parser.add_argument("--seed", type=int, help="master seed (overrides run.seed)")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--threads", type=int, help="worker threads for numba and BLAS")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    out = None
    try:
        if args.threads is not None:
            if args.threads < 1:
                raise CliError("--threads must be >= 1")
            set_num_threads(args.threads)
        items = build_run_config(args)
        if args.command != "grid":
            bad = [k for k, v in items.items() if "|" in v]
            if bad:
                raise CliError(f"alternatives (a|b) are only allowed with grid: {', '.join(bad)}")
        root = Path(args.out)
        made_root = not root.exists()
        root.mkdir(parents=True, exist_ok=True)
        out = Outputs(root)
        if made_root:
            out.created.append(root)
        text = HANDLERS[args.command](items, out)
    except Exception as exc:  # one-line, machine-parsable failure
        if out is not None:
            out.cleanup()
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"error: {args.command}: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 2
    sys.stdout.write(text)
    return 0
