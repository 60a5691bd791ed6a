"""``ibgen`` command line: train, sweep, bound, mi and data-cache.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
import traceback
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from . import bound as bl
from .classifier import TrainConfig, default_prior, evaluate_risk, generalization_error, train, write_train_log
from .config import ExperimentConfig, load_config
from .data import (
    Dataset,
    benchmark_spec,
    load_cifar10_bin,
    load_mnist_idx,
    subsample,
    subsample_split,
    uniform_halves_spec,
)
from .errors import ConfigError, IbgenError
from .formats import load_checkpoint, load_dataset_cache, save_checkpoint, save_dataset_cache
from .info import PriorSpec, estimate_mi
from .nn import Rng

log = logging.getLogger("ibgen")

SWEEP_METRICS = ("mi_train", "mi_test", "gen_error", "gen_error_signed", "train_risk", "test_risk", "accuracy")
SWEEP_HEADER = ["lambda", "log10_lambda", "replicates"] + [f"{m}_{s}" for m in SWEEP_METRICS for s in ("mean", "sd")]
RUNS_HEADER = ["lambda", "replicate", "seed"] + list(SWEEP_METRICS)
FAILURE_HEADER = ["lambda", "replicate", "seed", "error"]
SUMMARY_KEYS = ("train_risk", "test_risk", "gen_error", "gen_error_signed", "accuracy", "mi_train", "mi_test")

MNIST_FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte")


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def replicate_seed(seed: int, r: int) -> int:
    """Replicate 0 reuses the config seed so a one-replicate sweep matches ``train``."""
    if r == 0:
        return int(seed)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(zlib.crc32(b"replicate"), int(r)))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


def _find(directory, name):
    for cand in (name, name + ".gz", name.replace("-idx", ".idx")):
        p = os.path.join(directory, cand)
        if os.path.exists(p):
            return p
    raise ConfigError(f"{name} not found under {directory!r}")


def synthetic_source(cfg: ExperimentConfig):
    from .data import SyntheticSource

    d = cfg.data
    if d.synthetic == "benchmark":
        if d.synthetic_dim != 2:
            raise ConfigError("the benchmark source is two-dimensional")
        return SyntheticSource(benchmark_spec())
    if d.synthetic == "uniform":
        return SyntheticSource(uniform_halves_spec(d.synthetic_dim))
    raise ConfigError(f"unknown synthetic source {d.synthetic!r}")


def load_data(cfg: ExperimentConfig):
    """Return ``(train, test, source_or_None)`` as configured."""
    d = cfg.data
    seed = cfg.data_seed
    if d.kind == "synthetic":
        src = synthetic_source(cfg)
        base = Rng(seed)
        Xtr, ytr = src.sample(d.n_train, base.split("synthetic"))
        Xte, yte = src.sample(d.n_test, base.split("synthetic-test"))
        tag = f"synthetic:{d.synthetic}{d.synthetic_dim}@{seed}"
        return Dataset(Xtr, ytr, src.n_classes, tag + "|train"), Dataset(Xte, yte, src.n_classes, tag + "|test"), src
    if d.kind == "mnist":
        if not d.path:
            raise ConfigError("data.path must point at the MNIST IDX directory")
        full = load_mnist_idx(_find(d.path, MNIST_FILES[0]), _find(d.path, MNIST_FILES[1]))
        tr, te = subsample_split(full, d.n_train, d.n_test, seed)
        return tr, te, None
    if d.kind == "cifar10":
        if not d.path or not d.test_batches:
            raise ConfigError("data.path and data.test_batches must list CIFAR-10 batch files")
        full = load_cifar10_bin([p.strip() for p in d.path.split(",") if p.strip()])
        test = load_cifar10_bin([p.strip() for p in d.test_batches.split(",") if p.strip()])
        tr = subsample(full, d.n_train, seed)
        te = subsample(test, min(d.n_test, test.n), seed)
        return tr, te, None
    if d.kind == "cache":
        return load_dataset_cache(d.path + ".train.ibnd"), load_dataset_cache(d.path + ".test.ibnd"), None
    raise ConfigError(f"unknown data kind {d.kind!r}")


# ---------------------------------------------------------------------------
# single runs
# ---------------------------------------------------------------------------


def run_once(train_ds: Dataset, test_ds: Dataset, tcfg: TrainConfig):
    """Train one model and measure everything a sweep row needs."""
    res = train(train_ds, tcfg)
    rng = Rng(tcfg.seed).split("measure")
    ge = generalization_error(res.encoder, res.decoder, train_ds, test_ds, rng.split("gen-error"), tcfg.mc_eval)
    acc = evaluate_risk(res.encoder, res.decoder, test_ds.X, test_ds.y, rng.split("accuracy"), tcfg.mc_eval).accuracy
    prior = default_prior(tcfg)
    mi_tr = estimate_mi(res.encoder, train_ds.X, prior, "train")
    mi_te = estimate_mi(res.encoder, test_ds.X, prior, "test")
    summary = dict(
        train_risk=ge.train_risk,
        test_risk=ge.test_risk,
        gen_error=ge.value,
        gen_error_signed=ge.signed,
        accuracy=acc,
        mi_train=mi_tr.value,
        mi_test=mi_te.value,
    )
    return res, summary


def _write_summary(path, summary, extra=()):
    with open(path, "w") as fh:
        for k, v in extra:
            fh.write(f"{k}: {v}\n")
        for k in SUMMARY_KEYS:
            fh.write(f"{k}: {_fmt(summary[k])}\n")


def cmd_train(cfg: ExperimentConfig, out: str):
    train_ds, test_ds, _ = load_data(cfg)
    os.makedirs(out, exist_ok=True)
    res, summary = run_once(train_ds, test_ds, cfg.train)
    save_checkpoint(os.path.join(out, "checkpoint.ibnd"), res.encoder, res.decoder)
    write_train_log(os.path.join(out, "train_log.csv"), res.log)
    _write_summary(os.path.join(out, "report.txt"), summary, [("encoder", cfg.train.encoder), ("lambda", _fmt(cfg.train.lam)), ("seed", cfg.train.seed)])
    print(f"encoder={cfg.train.encoder} lambda={cfg.train.lam:g} seed={cfg.train.seed}")
    for k in SUMMARY_KEYS:
        print(f"  {k}: {summary[k]:.6f}")
    return summary


def _sweep_job(args):
    train_ds, test_ds, tcfg, run_dir = args
    try:
        res, summary = run_once(train_ds, test_ds, tcfg)
        os.makedirs(run_dir, exist_ok=True)
        save_checkpoint(os.path.join(run_dir, "checkpoint.ibnd"), res.encoder, res.decoder)
        write_train_log(os.path.join(run_dir, "train_log.csv"), res.log)
        return summary, None
    except Exception as exc:  # reported through the failure manifest
        return None, f"{type(exc).__name__}: {exc}"


def aggregate(runs: dict, lambdas, replicates: int):
    """Mean and sample sd per lambda over successful replicates, rows sorted by lambda."""
    rows = []
    for lam in sorted(lambdas):
        vals = [runs[(lam, r)] for r in range(replicates) if (lam, r) in runs]
        if not vals:
            continue
        row = {"lambda": lam, "log10_lambda": math.log10(lam) if lam > 0 else -math.inf, "replicates": len(vals)}
        for m in SWEEP_METRICS:
            a = np.array([v[m] for v in vals])
            row[f"{m}_mean"] = float(a.mean())
            row[f"{m}_sd"] = float(a.std(ddof=1)) if a.size > 1 else 0.0
        rows.append(row)
    return rows


def write_sweep_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        for row in rows:
            w.writerow([_fmt(row[k]) for k in SWEEP_HEADER])


def cmd_sweep(cfg: ExperimentConfig, out: str, jobs: int = 1):
    lambdas = cfg.lambda_grid
    if not lambdas:
        raise ConfigError("empty lambda grid")
    train_ds, test_ds, _ = load_data(cfg)
    os.makedirs(out, exist_ok=True)
    keys = [(lam, r) for lam in lambdas for r in range(cfg.replicates)]
    tasks = []
    for lam, r in keys:
        tcfg = replace(cfg.train, lam=lam, seed=replicate_seed(cfg.seed, r))
        tasks.append((train_ds, test_ds, tcfg, os.path.join(out, "runs", f"lam{_fmt(lam)}_rep{r}")))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_job, tasks))
    else:
        results = [_sweep_job(t) for t in tasks]

    runs, failures = {}, []
    for (lam, r), task, (summary, err) in zip(keys, tasks, results):
        if err is None:
            runs[(lam, r)] = summary
        else:
            failures.append((lam, r, task[2].seed, err))
    with open(os.path.join(out, "runs.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RUNS_HEADER)
        for (lam, r), task in zip(keys, tasks):
            if (lam, r) in runs:
                w.writerow([_fmt(lam), r, task[2].seed] + [_fmt(runs[(lam, r)][m]) for m in SWEEP_METRICS])
    rows = aggregate(runs, lambdas, cfg.replicates)
    write_sweep_csv(os.path.join(out, "sweep.csv"), rows)
    if failures:
        with open(os.path.join(out, "failures.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(FAILURE_HEADER)
            for f in failures:
                w.writerow([_fmt(f[0]), f[1], f[2], f[3]])
        raise IbgenError(f"{len(failures)} of {len(keys)} sweep runs failed; see failures.csv")
    for row in rows:
        print(f"lambda={row['lambda']:g} mi_train={row['mi_train_mean']:.4f} gen_error={row['gen_error_mean']:.4f} acc={row['accuracy_mean']:.4f}")
    return rows


def run_bound(cfg: ExperimentConfig, encoder=None, decoder=None):
    """Train (or use the given model) on the synthetic source and evaluate the bound.

    Returns ``(report, summary)``; ``summary`` holds the measured generalization error.
    """
    cfg.check_desk_scale()
    train_ds, test_ds, src = load_data(cfg)
    if encoder is None:
        res, summary = run_once(train_ds, test_ds, cfg.train)
        encoder, decoder = res.encoder, res.decoder
    else:
        rng = Rng(cfg.seed).split("measure")
        ge = generalization_error(encoder, decoder, train_ds, test_ds, rng.split("gen-error"), cfg.train.mc_eval)
        summary = dict(train_risk=ge.train_risk, test_risk=ge.test_risk, gen_error=ge.value, gen_error_signed=ge.signed)
    bcfg = replace(cfg.bound, n=train_ds.n, S=bl.second_moment_bound(encoder, train_ds.X))
    rng = Rng(cfg.seed).split("bound")
    comps, skipped = bl.evaluate_components(encoder, decoder, train_ds, bcfg, rng, source=src, data_probes=train_ds)
    mi_klsum = estimate_mi(encoder, train_ds.X, default_prior(cfg.train)).value
    meta = {
        "measured_gen_error": _fmt(summary["gen_error"]),
        "encoder": cfg.train.encoder,
        "seed": cfg.seed,
        "skipped_K": ",".join(str(k) for k in skipped) or "none",
        "masses": "exact cell integrals of the synthetic source",
        "mc_samples": bcfg.mc_samples,
        "random_probes_per_cell": bcfg.n_random_probes,
    }
    report = bl.assemble_bound(comps, bcfg, src.n_classes, float(src.class_priors().min()), encoder.d_u, mi_klsum, meta)
    return report, summary, (encoder, decoder)


def cmd_bound(cfg: ExperimentConfig, out: str):
    cfg.check_desk_scale()
    os.makedirs(out, exist_ok=True)
    report, summary, (enc, dec) = run_bound(cfg)
    save_checkpoint(os.path.join(out, "checkpoint.ibnd"), enc, dec)
    report.write_text(os.path.join(out, "bound_report.txt"))
    report.write_csv(os.path.join(out, "bound.csv"))
    print(f"bound={report.value:.6g} (K={report.best['K']}, beta={report.best['beta']:g}) measured |gen error|={summary['gen_error']:.6g}")
    return report


def cmd_mi(cfg: ExperimentConfig, checkpoint: str, split: str = "train", prior: str = ""):
    enc, _ = load_checkpoint(checkpoint)
    train_ds, test_ds, _ = load_data(cfg)
    ds = train_ds if split == "train" else test_ds
    if ds.d_x != enc.d_x:
        raise ConfigError(f"checkpoint expects d_x={enc.d_x}, dataset has {ds.d_x}")
    spec = PriorSpec(prior) if prior else None
    est = estimate_mi(enc, ds.X, spec, split)
    print(f"mi: {_fmt(est.value)}")
    print(f"split: {est.split}")
    print(f"prior: {est.prior}")
    print(f"n: {est.n}")
    for j, v in est.top_dims(5):
        print(f"  dim {j}: {_fmt(v)}")
    return est


def cmd_data_cache(cfg: ExperimentConfig, out: str):
    train_ds, test_ds, _ = load_data(cfg)
    os.makedirs(out, exist_ok=True)
    stem = os.path.join(out, "data")
    save_dataset_cache(stem + ".train.ibnd", train_ds)
    save_dataset_cache(stem + ".test.ibnd", test_ds)
    print(f"wrote {stem}.train.ibnd ({train_ds.n} rows) and {stem}.test.ibnd ({test_ds.n} rows)")
    return stem


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ibgen", description="Variational classifiers, MI estimates and generalization bounds.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="INI config file")
        sp.add_argument("--seed", type=int, help="overrides experiment.seed")
        sp.add_argument("--out", help="output directory (default: experiment.out)")
        sp.add_argument("--override", action="append", default=[], metavar="SECTION.KEY=VALUE")
        return sp

    common(sub.add_parser("train", help="train one model"))
    sw = common(sub.add_parser("sweep", help="lambda sweep with replicates"))
    sw.add_argument("--jobs", type=int, help="parallel runs (default: experiment.jobs)")
    common(sub.add_parser("bound", help="evaluate the generalization bound on a synthetic source"))
    mi = common(sub.add_parser("mi", help="KL-sum MI estimate for a checkpoint"))
    mi.add_argument("--checkpoint", required=True)
    mi.add_argument("--split", choices=("train", "test"), default="train")
    mi.add_argument("--prior", default="")
    common(sub.add_parser("data-cache", help="write the configured train/test subsets as IBND caches"))
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with code 2 on usage errors
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.override, args.seed)
        out = args.out or cfg.out
        if args.command == "train":
            cmd_train(cfg, out)
        elif args.command == "sweep":
            cmd_sweep(cfg, out, args.jobs or cfg.jobs)
        elif args.command == "bound":
            cmd_bound(cfg, out)
        elif args.command == "mi":
            cmd_mi(cfg, args.checkpoint, args.split, args.prior)
        elif args.command == "data-cache":
            cmd_data_cache(cfg, out)
    except ConfigError as exc:
        print(f"ibgen: configuration error: {exc}", file=sys.stderr)
        return 2
    except (IbgenError, OSError, ValueError, FloatingPointError) as exc:
        print(f"ibgen: error: {exc}", file=sys.stderr)
        if args.verbose:
            traceback.print_exc()
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
