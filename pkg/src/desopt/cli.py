"""Experiment runner: JSON experiment specs expanded over datasets, losses,
algorithms, step-size grids, and seeds, with deterministic CSV outputs.

Exit codes: 0 success, 1 validation or parse failure, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path

from .baselines import (
    BaselineConfig,
    run_es_csa,
    run_fed_zo_gd,
    run_fed_zo_sgd,
    run_zo_signsgd,
)
from .bench import (
    aggregate_runs,
    compute_profiles,
    read_metrics_csv,
    write_metrics_csv,
    write_profiles_csv,
)
from .dataio import (
    SplitSpec,
    SynthKind,
    parse_libsvm,
    split_train_test,
    synth_dataset,
)
from .mutation import MutationKind, MutationModel, RngStream
from .objective import Dataset, LossKind
from .server import BETA_LIMIT, DesConfig, run_des

_MODEL_NAMES = {
    "gaussian": MutationKind.STANDARD_GAUSSIAN,
    "mixture_gaussian": MutationKind.MIXTURE_GAUSSIAN,
    "mixture_rademacher": MutationKind.MIXTURE_RADEMACHER,
}
_SYNTH_NAMES = {kind.value: kind for kind in SynthKind}
_ALGO_NAMES = ("des", "fed-zo-gd", "fed-zo-sgd", "zo-signsgd", "es-csa")


@dataclass(frozen=True)
class DatasetSpec:
    """Either a synthetic generator (synthetic+n+examples) or a LIBSVM path."""

    name: str
    synthetic: SynthKind | None = None
    n: int | None = None
    examples: int | None = None
    path: str | None = None
    label_threshold: float | None = None
    n_features: int | None = None
    seed: int = 0


@dataclass(frozen=True)
class AlgoSpec:
    name: str
    alphas: tuple[float, ...] = (0.1, 1.0, 10.0)
    beta: float = 0.5
    model: str = "gaussian"
    mixture_size: int = 8
    allow_unsafe_beta: bool = False


@dataclass(frozen=True)
class ExperimentSpec:
    datasets: tuple[DatasetSpec, ...]
    losses: tuple[LossKind, ...]
    algorithms: tuple[AlgoSpec, ...]
    workers: int = 10
    batch_size: int = 1000
    local_iters: int | None = None
    epochs: int | None = None
    split_fraction: float = 0.8
    reg: float = 1e-6
    delta: float = 0.1
    seeds: tuple[int, ...] = tuple(range(8))
    out_dir: str = "runs"


def _require(condition: bool, field: str, message: str) -> None:
    if not condition:
        raise ValueError(f"field {field!r}: {message}")


def _check_keys(entry: dict, allowed: set[str], where: str) -> None:
    for key in entry:
        if key not in allowed:
            raise ValueError(f"unknown key {key!r} in {where}")


def _build_dataset_spec(entry: dict, index: int) -> DatasetSpec:
    where = f"datasets[{index}]"
    _check_keys(entry, {"name", "synthetic", "n", "examples", "path",
                        "label_threshold", "n_features", "seed"}, where)
    _require("name" in entry, f"{where}.name", "required")
    synth = entry.get("synthetic")
    path = entry.get("path")
    _require((synth is None) != (path is None), where, "give exactly one of synthetic/path")
    if synth is not None:
        _require(synth in _SYNTH_NAMES, f"{where}.synthetic",
                 f"expected one of {sorted(_SYNTH_NAMES)}")
        _require(isinstance(entry.get("n"), int) and entry["n"] >= 1, f"{where}.n",
                 "synthetic datasets need a positive integer dimension")
        _require(isinstance(entry.get("examples"), int) and entry["examples"] >= 2,
                 f"{where}.examples", "synthetic datasets need >= 2 examples")
    return DatasetSpec(
        name=str(entry["name"]),
        synthetic=_SYNTH_NAMES[synth] if synth is not None else None,
        n=entry.get("n"),
        examples=entry.get("examples"),
        path=path,
        label_threshold=entry.get("label_threshold"),
        n_features=entry.get("n_features"),
        seed=int(entry.get("seed", 0)),
    )


def _build_algo_spec(entry: dict, index: int) -> AlgoSpec:
    where = f"algorithms[{index}]"
    _check_keys(entry, {"name", "alpha", "beta", "model", "l", "allow_unsafe_beta"}, where)
    name = entry.get("name")
    _require(name in _ALGO_NAMES, f"{where}.name", f"expected one of {_ALGO_NAMES}")
    alpha = entry.get("alpha", [0.1, 1.0, 10.0])
    if not isinstance(alpha, list):
        alpha = [alpha]
    _require(len(alpha) > 0 and all(a > 0 for a in alpha), f"{where}.alpha",
             "step-sizes must be positive")
    beta = float(entry.get("beta", 0.5))
    _require(0.0 <= beta < 1.0, f"{where}.beta", f"must be in [0,1), got {beta}")
    allow_unsafe = bool(entry.get("allow_unsafe_beta", False))
    if name == "des" and not allow_unsafe:
        _require(beta < BETA_LIMIT, f"{where}.beta",
                 f"must stay below {BETA_LIMIT:.6f} unless allow_unsafe_beta is set")
    model = entry.get("model", "gaussian")
    _require(model in _MODEL_NAMES, f"{where}.model", f"expected one of {sorted(_MODEL_NAMES)}")
    mixture_size = int(entry.get("l", 8))
    _require(mixture_size >= 1, f"{where}.l", "must be >= 1")
    return AlgoSpec(
        name=name,
        alphas=tuple(float(a) for a in alpha),
        beta=beta,
        model=model,
        mixture_size=mixture_size,
        allow_unsafe_beta=allow_unsafe,
    )


def _build_spec(raw: dict) -> ExperimentSpec:
    _check_keys(raw, {"datasets", "losses", "algorithms", "workers", "batch_size",
                      "local_iters", "epochs", "split_fraction", "reg", "delta",
                      "seeds", "out_dir"}, "experiment spec")
    _require(isinstance(raw.get("datasets"), list) and raw["datasets"], "datasets",
             "need at least one dataset")
    _require(isinstance(raw.get("algorithms"), list) and raw["algorithms"], "algorithms",
             "need at least one algorithm")
    datasets = tuple(_build_dataset_spec(e, i) for i, e in enumerate(raw["datasets"]))
    algorithms = tuple(_build_algo_spec(e, i) for i, e in enumerate(raw["algorithms"]))

    loss_names = raw.get("losses", ["LR"])
    for name in loss_names:
        _require(name in LossKind.__members__, "losses",
                 f"unknown loss {name!r}, expected subset of {list(LossKind.__members__)}")
    losses = tuple(LossKind[name] for name in loss_names)
    _require(len(losses) > 0, "losses", "need at least one loss")

    workers = int(raw.get("workers", 10))
    _require(workers >= 1, "workers", "must be >= 1")
    batch_size = int(raw.get("batch_size", 1000))
    _require(batch_size >= 1, "batch_size", "must be >= 1")
    local_iters = raw.get("local_iters")
    _require(local_iters is None or (isinstance(local_iters, int) and local_iters >= 1),
             "local_iters", "must be a positive integer or null")
    epochs = raw.get("epochs")
    _require(epochs is None or (isinstance(epochs, int) and epochs >= 1),
             "epochs", "must be a positive integer or null")
    split_fraction = float(raw.get("split_fraction", 0.8))
    _require(0.0 < split_fraction < 1.0, "split_fraction", "must be in (0,1)")
    reg = float(raw.get("reg", 1e-6))
    _require(reg >= 0.0, "reg", "must be nonnegative")
    delta = float(raw.get("delta", 0.1))
    _require(0.0 < delta < 1.0, "delta", f"must be in (0,1), got {delta}")
    seeds = tuple(int(s) for s in raw.get("seeds", range(8)))
    _require(len(seeds) > 0, "seeds", "need at least one seed")
    _require(len(set(seeds)) == len(seeds), "seeds", "must be distinct")

    return ExperimentSpec(
        datasets=datasets, losses=losses, algorithms=algorithms,
        workers=workers, batch_size=batch_size, local_iters=local_iters,
        epochs=epochs, split_fraction=split_fraction, reg=reg, delta=delta,
        seeds=seeds, out_dir=str(raw.get("out_dir", "runs")),
    )


def load_spec(path) -> ExperimentSpec:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    return _build_spec(raw)


def _apply_overrides(raw: dict, pairs: list[str]) -> dict:
    """Apply --set KEY=VALUE overrides; dotted keys descend, integers index lists."""
    for pair in pairs:
        key, sep, text = pair.partition("=")
        if not sep:
            raise ValueError(f"--set expects KEY=VALUE, got {pair!r}")
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        node = raw
        parts = key.split(".")
        try:
            for part in parts[:-1]:
                node = node[int(part)] if isinstance(node, list) else node.setdefault(part, {})
            if isinstance(node, list):
                node[int(parts[-1])] = value
            else:
                node[parts[-1]] = value
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise ValueError(f"--set path {key!r} does not fit the experiment file: {exc}") from exc
    return raw


def _load_dataset(ds: DatasetSpec) -> Dataset:
    if ds.synthetic is not None:
        return synth_dataset(ds.synthetic, ds.n, ds.examples, RngStream(ds.seed, "synth"))
    return parse_libsvm(ds.path, n_features=ds.n_features, label_threshold=ds.label_threshold)


def _dimension_rule(n: int, spec: ExperimentSpec) -> tuple[int, int]:
    """Local iteration count and epoch budget, auto-scaled by dimension."""
    local_iters = spec.local_iters if spec.local_iters is not None else (100 if n <= 100 else 500)
    epochs = spec.epochs if spec.epochs is not None else (1000 if n <= 100 else 5000)
    return local_iters, epochs


def _run_cell(spec, algo: AlgoSpec, alpha: float, seed: int, train, test,
              loss: LossKind, local_iters: int, rounds: int,
              threads: int | None, timing: bool, instance: str):
    if algo.name == "des":
        model = MutationModel(_MODEL_NAMES[algo.model], train.n_features, l=algo.mixture_size)
        cfg = DesConfig(
            workers=spec.workers, rounds=rounds, local_iters=local_iters,
            batch_size=spec.batch_size, alpha=alpha, model=model, seed=seed,
            beta=algo.beta, allow_unsafe_beta=algo.allow_unsafe_beta,
        )
        return run_des(cfg, train, test, loss, reg=spec.reg, threads=threads,
                       timing=timing, instance=instance)
    cfg = BaselineConfig(
        workers=spec.workers, rounds=rounds, local_iters=local_iters,
        batch_size=spec.batch_size, alpha=alpha, seed=seed,
    )
    runner = {
        "fed-zo-gd": run_fed_zo_gd,
        "fed-zo-sgd": run_fed_zo_sgd,
        "zo-signsgd": run_zo_signsgd,
        "es-csa": run_es_csa,
    }[algo.name]
    return runner(cfg, train, test, loss, reg=spec.reg, threads=threads,
                  timing=timing, instance=instance)


def run_matrix(spec: ExperimentSpec, threads: int | None = None, timing: bool = False) -> int:
    """Execute the full experiment cross-product and write metrics/profiles CSVs.

    Per-cell failures are reported and skipped; any failure yields exit code 2.
    """
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    failures: list[tuple[str, Exception]] = []

    for ds in spec.datasets:
        try:
            full = _load_dataset(ds)
            train, test = split_train_test(
                full, SplitSpec(spec.split_fraction, RngStream(ds.seed, "split"))
            )
        except Exception as exc:
            failures.append((f"dataset {ds.name}", exc))
            continue
        local_iters, epochs = _dimension_rule(full.n_features, spec)
        per_round = spec.workers * local_iters * spec.batch_size
        rounds = (epochs * len(train)) // per_round
        if rounds == 0:
            warnings.warn(
                f"dataset {ds.name}: budget {epochs}x{len(train)} is below one round "
                f"({per_round} evaluations); emitting round-0 snapshots only"
            )
        for loss in spec.losses:
            instance = f"{ds.name}/{loss.value}"
            for algo in spec.algorithms:
                for alpha in algo.alphas:
                    for seed in spec.seeds:
                        try:
                            rec = _run_cell(spec, algo, alpha, seed, train, test, loss,
                                            local_iters, rounds, threads, timing, instance)
                        except Exception as exc:
                            failures.append(
                                (f"{algo.name} alpha={alpha:g} on {instance} seed {seed}", exc)
                            )
                            continue
                        if len(algo.alphas) > 1:
                            rec.algorithm = f"{rec.algorithm}@a={alpha:g}"
                        records.append(rec)

    metrics_path = out / "metrics.csv"
    write_metrics_csv(records, metrics_path)
    print(f"wrote {metrics_path} ({sum(len(r.rows) for r in records)} rows)")

    if records:
        try:
            curves = compute_profiles(records, spec.delta)
            write_profiles_csv(curves, out / "profiles.csv")
            print(f"wrote {out / 'profiles.csv'} ({len(curves)} curves)")
        except ValueError as exc:
            print(f"profiles skipped: {exc}")

    cells: dict[tuple[str, str], list] = {}
    for rec in records:
        cells.setdefault((rec.algorithm, rec.instance), []).append(rec)
    if cells:
        print(f"{'algo':24} {'instance':20} {'final train loss (median)'}")
        for (algo_id, instance), cell in sorted(cells.items()):
            agg = aggregate_runs(cell)
            print(f"{algo_id:24} {instance:20} {agg.train_loss_median[-1]:.6g}")

    for name, exc in failures:
        print(f"FAILED {name}: {exc}", file=sys.stderr)
    return 2 if failures else 0


def _cmd_run(args) -> int:
    with open(args.spec, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    raw = _apply_overrides(raw, args.overrides)
    if args.out is not None:
        raw["out_dir"] = args.out
    spec = _build_spec(raw)
    threads = args.threads if args.threads is not None else os.cpu_count()
    return run_matrix(spec, threads=threads, timing=args.timing)


def _cmd_profile(args) -> int:
    records = read_metrics_csv(args.metrics)
    curves = compute_profiles(records, args.delta)
    out = Path(args.out) if args.out else Path(args.metrics).with_name("profiles.csv")
    write_profiles_csv(curves, out)
    for curve in curves:
        tail = curve.breakpoints[-1] if curve.breakpoints else (float("inf"), 0.0)
        print(f"{curve.algorithm}: rho(1)={curve.rho_at(1.0):.3f}, "
              f"final rho={tail[1]:.3f} at tau={tail[0]:g}")
    print(f"wrote {out}")
    return 0


def _cmd_parse_check(args) -> int:
    dataset = parse_libsvm(args.file, label_threshold=args.label_threshold)
    positive = int((dataset.labels == 1.0).sum())
    print(f"ok: {len(dataset)} examples, {dataset.n_features} features, "
          f"{positive} positive / {len(dataset) - positive} negative")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="desopt",
        description="Distributed evolution-strategy experiments over sparse linear losses.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute an experiment spec")
    run_p.add_argument("spec", help="JSON experiment spec file")
    run_p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override a spec entry (dotted paths)")
    run_p.add_argument("--out", default=None, help="output directory")
    run_p.add_argument("--threads", type=int, default=None,
                       help="worker thread cap (default: CPU count); results are identical at any value")
    run_p.add_argument("--timing", action="store_true",
                       help="record wall-clock times (breaks byte-reproducibility of CSVs)")

    prof_p = sub.add_parser("profile", help="compute performance profiles from a metrics CSV")
    prof_p.add_argument("metrics", help="metrics.csv produced by run")
    prof_p.add_argument("--delta", type=float, required=True, help="solved threshold in (0,1)")
    prof_p.add_argument("--out", default=None, help="output CSV (default: profiles.csv beside input)")

    chk_p = sub.add_parser("parse-check", help="validate a LIBSVM file")
    chk_p.add_argument("file")
    chk_p.add_argument("--label-threshold", type=float, default=None,
                       help="binarize labels by label > threshold when not already binary")

    args = parser.parse_args(argv)
    commands = {"run": _cmd_run, "profile": _cmd_profile, "parse-check": _cmd_parse_check}
    try:
        return commands[args.command](args)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
