"""Command-line entry point.

Exit codes: 0 success, 2 invalid configuration, 3 data error, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import data as data_mod
from .config import ConfigError, RunConfig, build_config, replace
from .data import DataError, Dataset, SyntheticSpec
from .evaluate import knn_accuracy, recovery_rate
from .evolution import run
from .sparse import dense_param_count, sparse_param_count, training_flops

log = logging.getLogger("neurofs")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _thread_limit():
    n = os.environ.get("NEUROFS_THREADS")
    if not n:
        return nullcontext(), 1
    from threadpoolctl import threadpool_limits

    n = max(1, int(n))
    return threadpool_limits(limits=n), n


def parse_synthetic(spec: str) -> SyntheticSpec:
    kw = {}
    for part in filter(None, (p.strip() for p in spec.split(","))):
        key, _, value = part.partition("=")
        key = key.strip()
        if key not in ("d", "m", "n_informative", "noise_sigma", "seed"):
            raise DataError(f"unknown synthetic parameter {key!r}")
        kw[key] = float(value) if key == "noise_sigma" else int(value)
    return SyntheticSpec(**kw)


def _load_one(cfg: RunConfig, source: str) -> Dataset:
    if cfg.format == "csv":
        return data_mod.load_csv(source, cfg.label_column)
    if cfg.format == "idx":
        parts = [p.strip() for p in source.split(",")]
        if len(parts) != 2:
            raise DataError("idx data must be given as 'images_path,labels_path'")
        return data_mod.load_idx(*parts)
    raise DataError(f"cannot load format {cfg.format!r} from a path")


def load_data(cfg: RunConfig):
    """Return (train, test, informative) after splitting, subsampling and scaling."""
    if not cfg.data:
        raise ConfigError("no data given (set 'data' or pass --data)")
    informative = None
    if cfg.format == "synthetic":
        full, informative = data_mod.gen_synthetic(parse_synthetic(cfg.data))
        train, test = data_mod.split(full, cfg.test_fraction, cfg.split_seed)
    elif cfg.test_data:
        train, test = _load_one(cfg, cfg.data), _load_one(cfg, cfg.test_data)
        if test.d != train.d:
            raise DataError(f"train has {train.d} features but test has {test.d}")
        n_classes = max(train.n_classes, test.n_classes)
        train = Dataset(train.X, train.y, train.feature_names, n_classes)
        test = Dataset(test.X, test.y, test.feature_names, n_classes)
    else:
        train, test = data_mod.split(_load_one(cfg, cfg.data), cfg.test_fraction, cfg.split_seed)
    if cfg.subsample and cfg.subsample < train.m:
        idx = np.sort(np.random.default_rng(cfg.split_seed).permutation(train.m)[: cfg.subsample])
        train = train.subset(idx)
    if cfg.scale == "minmax":
        train, (test,) = data_mod.scale_minmax(train, [test])
    elif cfg.scale == "standard":
        train, (test,) = data_mod.scale_standard(train, [test])
    return train, test, informative


def load_data_checked(cfg: RunConfig):
    try:
        return load_data(cfg)
    except ConfigError as e:
        raise CliError(EXIT_CONFIG, f"invalid config: {e}") from None
    except (ValueError, OSError) as e:
        raise CliError(EXIT_DATA, f"data error: {e}") from None


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def select_once(cfg: RunConfig) -> dict:
    """Run one selection and write its outputs into ``cfg.out``."""
    train, _, informative = load_data_checked(cfg)
    if cfg.K > train.d:
        raise CliError(EXIT_CONFIG, f"invalid config: K={cfg.K} must be <= d={train.d} (number of features)")
    try:
        ecfg = cfg.evolution_config(train.m)
    except ConfigError as e:
        raise CliError(EXIT_CONFIG, f"invalid config: {e}") from None

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.echo())
    try:
        result = run(train, ecfg)
    except Exception as e:  # noqa: BLE001 - reported through the exit code
        log.exception("run failed")
        raise CliError(EXIT_RUNTIME, f"runtime failure: {e}") from None

    doc = json.loads(result.to_json())
    doc["data"] = {"d": train.d, "m_train": train.m, "n_classes": train.n_classes}
    if informative is not None:
        doc["informative"] = [int(i) for i in informative]
        doc["recovery_rate"] = recovery_rate(result.selected, informative)
    (out / "selected.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")

    losses = [float("nan"), *result.loss_history]
    _write_csv(
        out / "active_history.csv", ["epoch", "active", "loss"],
        [[t, a, repr(l)] for t, (a, l) in enumerate(zip(result.active_history, losses))],
    )
    if result.strength_history:
        header = ["epoch", *train.feature_names]
        rows = []
        for t, s in sorted(result.strength_history.items()):
            row = [t, *(repr(float(v)) for v in s)]
            rows.append(row)
            _write_csv(out / f"strength_epoch_{t}.csv", header, [row])
        _write_csv(out / "strength_history.csv", header, rows)
    return doc


def _parse_seeds(text: str) -> list[int]:
    lo, sep, hi = text.partition("..")
    if not sep:
        return [int(s) for s in text.split(",")]
    return list(range(int(lo), int(hi) + 1))


def _select_seed(cfg: RunConfig) -> tuple[int, str]:
    try:
        select_once(cfg)
        return EXIT_OK, ""
    except CliError as e:
        return e.code, str(e)


def cmd_select(cfg: RunConfig, seeds: str | None = None) -> int:
    limit, n_threads = _thread_limit()
    with limit:
        if not seeds:
            doc = select_once(cfg)
            print(f"selected {len(doc['selected'])} features -> {Path(cfg.out) / 'selected.json'}")
            if "recovery_rate" in doc:
                print(f"recovery rate: {doc['recovery_rate']:.4f}")
            return EXIT_OK
        runs = [replace(cfg, seed=s, out=str(Path(cfg.out) / f"seed_{s}")) for s in _parse_seeds(seeds)]
        with ProcessPoolExecutor(max_workers=n_threads) as pool:
            outcomes = list(pool.map(_select_seed, runs))
    worst = EXIT_OK
    for r, (code, msg) in zip(runs, outcomes):
        print(f"seed {r.seed}: {'ok' if code == EXIT_OK else msg}")
        worst = max(worst, code)
    return worst


def _read_selection(path) -> list[int]:
    p = Path(path)
    if not p.is_file():
        raise CliError(EXIT_DATA, f"selection file not found: {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise CliError(EXIT_DATA, f"invalid selection file: {e}") from None
    sel = doc.get("selected") if isinstance(doc, dict) else doc
    if not isinstance(sel, list) or not all(isinstance(i, int) for i in sel) or not sel:
        raise CliError(EXIT_DATA, "selection must be a non-empty list of integer indices")
    return sel


def cmd_eval(cfg: RunConfig, selected_path, baseline: bool = False) -> int:
    selected = _read_selection(selected_path)
    train, test, _ = load_data_checked(cfg)
    bad = [i for i in selected if not 0 <= i < train.d]
    if bad:
        raise CliError(EXIT_DATA, f"selection contains indices outside 0..{train.d - 1}: {bad[:5]}")
    if cfg.knn_k > train.m:
        raise CliError(EXIT_CONFIG, f"invalid config: knn_k={cfg.knn_k} exceeds {train.m} training samples")
    report = {
        "selection": str(selected_path),
        "n_selected": len(selected),
        "knn_k": cfg.knn_k,
        "accuracy": knn_accuracy(train, test, selected, cfg.knn_k),
    }
    if baseline:
        report["baseline_accuracy"] = knn_accuracy(train, test, np.arange(train.d), cfg.knn_k)
    print(f"k-NN (k={cfg.knn_k}) accuracy on {len(selected)} features: {report['accuracy']:.4f}")
    if baseline:
        print(f"k-NN accuracy on all {train.d} features: {report['baseline_accuracy']:.4f}")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def flops_report(d: int, hidden, n_classes: int, epsilon: float, m_train: int, epochs: int) -> dict:
    hidden = list(hidden)
    archs = {
        "sparse": sparse_param_count([d, *hidden, n_classes], epsilon),
        "dense_1": dense_param_count([d, hidden[0], n_classes]),
        "dense_3": dense_param_count([d, *hidden, n_classes]),
    }
    return {
        name: {"params": p, "training_flops": training_flops(p, m_train, epochs)}
        for name, p in archs.items()
    }


def cmd_flops(cfg: RunConfig, dims: str | None = None, m_train: int | None = None) -> int:
    if dims:
        try:
            sizes = [int(x) for x in dims.split(",")]
        except ValueError:
            raise CliError(EXIT_CONFIG, f"invalid dims {dims!r}") from None
        if len(sizes) < 3 or min(sizes) < 1:
            raise CliError(EXIT_CONFIG, "dims need an input, at least one hidden and an output size, all positive")
        d, hidden, n_classes = sizes[0], sizes[1:-1], sizes[-1]
        if m_train is None:
            raise CliError(EXIT_CONFIG, "--m-train is required together with --dims")
    else:
        train, _, _ = load_data_checked(cfg)
        d, hidden, n_classes = train.d, cfg.hidden_sizes(), train.n_classes
        m_train = train.m if m_train is None else m_train
    if cfg.epsilon <= 0:
        raise CliError(EXIT_CONFIG, "epsilon must be positive")
    report = flops_report(d, hidden, n_classes, cfg.epsilon, m_train, cfg.epochs)
    print(f"dims [{d}, {', '.join(map(str, hidden))}, {n_classes}]  epsilon={cfg.epsilon:g}  m_train={m_train}  epochs={cfg.epochs}")
    for name, row in report.items():
        print(f"{name:8s} params {row['params']:>12d} ({row['params'] / 1e5:.2f}e5)   "
              f"training FLOPs {row['training_flops']:.4e}")
    return EXIT_OK


def read_strengths(path, epoch: int | None = None) -> np.ndarray:
    p = Path(path)
    if not p.is_file():
        raise CliError(EXIT_DATA, f"strength file not found: {p}")
    with open(p, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if rows and rows[0][0] == "epoch":
        body = rows[1:]
        if not body:
            raise CliError(EXIT_DATA, "strength file has no data rows")
        if epoch is None:
            row = body[-1]
        else:
            match = [r for r in body if int(r[0]) == epoch]
            if not match:
                raise CliError(EXIT_DATA, f"epoch {epoch} not in {p}")
            row = match[0]
        return np.array([float(v) for v in row[1:]])
    return np.array([float(v) for r in rows for v in r])


def write_pgm(values: np.ndarray, rows: int, cols: int, out_path) -> None:
    """ASCII PGM (P2), min-max normalised to 0..255; constant input gives 0."""
    values = np.asarray(values, dtype=np.float64)
    if values.size != rows * cols:
        raise ValueError(f"{values.size} values do not fill a {rows}x{cols} image")
    lo, hi = values.min(), values.max()
    pix = np.zeros(values.size, dtype=np.int64) if hi == lo else np.rint((values - lo) / (hi - lo) * 255).astype(np.int64)
    pix = pix.reshape(rows, cols)
    lines = ["P2", f"{cols} {rows}", "255", *(" ".join(map(str, r)) for r in pix)]
    Path(out_path).write_text("\n".join(lines) + "\n")


def cmd_heatmap(strength_csv, rows: int, cols: int, out_path, epoch: int | None = None) -> int:
    s = read_strengths(strength_csv, epoch)
    if rows * cols != s.size:
        raise CliError(EXIT_CONFIG, f"shape mismatch: {rows}x{cols}={rows * cols} but d={s.size}")
    write_pgm(s, rows, cols, out_path)
    print(f"wrote {rows}x{cols} heatmap -> {out_path}")
    return EXIT_OK


def cmd_synth(spec: str, out_csv, informative_path=None) -> int:
    try:
        ds, informative = data_mod.gen_synthetic(parse_synthetic(spec))
    except (DataError, ValueError) as e:
        raise CliError(EXIT_CONFIG, f"invalid synthetic spec: {e}") from None
    _write_csv(
        Path(out_csv), [*ds.feature_names, "label"],
        [[*(repr(float(v)) for v in x), int(c)] for x, c in zip(ds.X, ds.y)],
    )
    if informative_path:
        Path(informative_path).write_text(json.dumps([int(i) for i in informative]) + "\n")
    print(f"wrote {ds.m}x{ds.d} synthetic dataset -> {out_csv}")
    return EXIT_OK


def _add_run_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat 'key = value' config file")
    p.add_argument("--data", help="CSV path, 'images,labels' IDX pair, or synthetic spec 'd=..,m=..'")
    p.add_argument("--test-data")
    p.add_argument("--format", choices=["csv", "idx", "synthetic"])
    p.add_argument("--label-column")
    p.add_argument("--test-fraction", type=float)
    p.add_argument("--split-seed", type=int)
    p.add_argument("--subsample", type=int, help="use only this many training samples")
    p.add_argument("--scale", choices=["minmax", "standard", "none"])
    p.add_argument("--k", dest="K", type=int, help="number of features to select")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--zeta-in", type=float)
    p.add_argument("--zeta-h", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--mode", choices=["neurofs", "random-growth", "rigl-fs"])
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--hidden", help="comma-separated hidden layer sizes")
    p.add_argument("--activation", choices=["tanh", "relu"])
    p.add_argument("--knn-k", type=int)
    p.add_argument("--log-interval", type=int)
    p.add_argument("--out")


RUN_KEYS = (
    "data", "test_data", "format", "label_column", "test_fraction", "split_seed", "subsample",
    "scale", "K", "epsilon", "zeta_in", "zeta_h", "alpha", "epochs", "mode", "seed", "lr",
    "momentum", "batch_size", "hidden", "activation", "knn_k", "log_interval", "out",
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="neurofs", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("select", help="train and select K features")
    _add_run_flags(p)
    p.add_argument("--seeds", help="run several seeds, e.g. 0..4, each into OUT/seed_<s>")

    p = sub.add_parser("eval", help="k-NN accuracy of a selection on the test split")
    _add_run_flags(p)
    p.add_argument("--selected", required=True, help="selected.json from 'select'")
    p.add_argument("--baseline", action="store_true", help="also report all-feature accuracy")

    p = sub.add_parser("flops", help="parameter and training FLOPs accounting")
    _add_run_flags(p)
    p.add_argument("--dims", help="layer sizes d,h1,...,C (skips loading data)")
    p.add_argument("--m-train", type=int)

    p = sub.add_parser("heatmap", help="write a strength vector as a PGM image")
    p.add_argument("strength_csv")
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--cols", type=int, required=True)
    p.add_argument("--epoch", type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset as CSV")
    p.add_argument("spec", help="e.g. d=500,m=2000,n_informative=20,seed=7")
    p.add_argument("--out", required=True)
    p.add_argument("--informative", help="write ground-truth indices as JSON here")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "heatmap":
            return cmd_heatmap(args.strength_csv, args.rows, args.cols, args.out, args.epoch)
        if args.command == "synth":
            return cmd_synth(args.spec, args.out, args.informative)
        overrides = {k: getattr(args, k) for k in RUN_KEYS}
        try:
            cfg = build_config(args.config, overrides)
        except ConfigError as e:
            raise CliError(EXIT_CONFIG, f"invalid config: {e}") from None
        if args.command == "select":
            return cmd_select(cfg, args.seeds)
        if args.command == "eval":
            return cmd_eval(cfg, args.selected, args.baseline)
        return cmd_flops(cfg, args.dims, args.m_train)
    except CliError as e:
        print(f"neurofs: {e}", file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())
