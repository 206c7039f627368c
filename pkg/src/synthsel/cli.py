"""Command-line entry points.

    synthsel gen-data  --config exp.json --out DIR
    synthsel select    --config exp.json [--algorithm A] [--controller C]
                       --out mask.json [--log run.jsonl] [--histogram hist.csv]
    synthsel compare   --config exp.json --out report.json [--histogram-dir DIR]
    synthsel report    --in report.json --format table|csv
    synthsel grad-check

Global flags: --seed overrides the task master seed, --threads parallelizes
compare across seeds.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import verify
from .baselines import SelectionMask
from .errors import SynthselError
from .featurestore import FeatureSet, save_features
from .harness import (
    ExperimentConfig,
    ExperimentReport,
    compare_methods,
    distance_histogram,
    generate_synthetic_task,
    load_experiment_config,
    run_experiment,
    write_histogram_csv,
)
from .numkit import RngStream, derive_seed


def _load_config(path: str, seed_override: int | None) -> ExperimentConfig:
    cfg = load_experiment_config(path)
    if seed_override is not None:
        cfg = replace(cfg, task=replace(cfg.task, master_seed=seed_override))
    return cfg


def _cmd_gen_data(args, seed_override) -> int:
    cfg = _load_config(args.config, seed_override)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train, val, test, pool = generate_synthetic_task(cfg.task)
    save_features(train, out / "train.fsel")
    save_features(val, out / "validation.fsel")
    save_features(test, out / "test.fsel")
    feats = np.concatenate([pool.features[c] for c in pool.class_ids])
    labels = np.concatenate([np.full(pool.size(c), c) for c in pool.class_ids])
    save_features(FeatureSet(feats, labels, cfg.task.class_count, "train"), out / "pool.fsel")
    meta = {
        "provenance": pool.provenance,
        "clean_flags": {str(c): pool.clean_flags[c].astype(int).tolist()
                        for c in pool.class_ids},
        "task": json.loads(json.dumps(cfg.task.__dict__)),
    }
    (out / "pool_meta.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    print(f"wrote train/validation/test/pool feature files to {out}")
    return 0


def _cmd_select(args, seed_override) -> int:
    cfg = _load_config(args.config, seed_override)
    if args.algorithm:
        cfg = replace(cfg, algorithm=args.algorithm)
    if args.controller:
        cfg = replace(cfg, controller=replace(cfg.controller, variant=args.controller))
    run_seed = cfg.seeds[0]
    record = run_experiment(cfg, run_seed, log_path=args.log)
    record.mask.save(args.out)
    print(f"seed {run_seed}: selected {record.mask.total_selected()} candidates "
          f"(keep rate {record.keep_rate:.3f}), test accuracy {record.test_report.accuracy:.4f}")
    if args.histogram:
        from .featurestore import compute_centroids

        base = derive_seed(cfg.task.master_seed, run_seed)
        train, _, _, pool = generate_synthetic_task(cfg.task, RngStream(base, "data-gen"))
        rows = distance_histogram(record.mask, pool, compute_centroids(train), args.bins)
        write_histogram_csv(rows, args.histogram)
        print(f"wrote histogram to {args.histogram}")
    return 0


def _cmd_compare(args, seed_override, threads) -> int:
    cfg = _load_config(args.config, seed_override)
    report = compare_methods(cfg, threads=threads, histogram_bins=args.bins)
    report.save(args.out)
    print(f"wrote report to {args.out}")
    if args.histogram_dir:
        hist_dir = Path(args.histogram_dir)
        hist_dir.mkdir(parents=True, exist_ok=True)
        for row in report.body["rl"]["per_seed"]:
            rows = [tuple(r) for r in row["histogram"]]
            write_histogram_csv(rows, hist_dir / f"hist_seed{row['seed']}.csv")
        print(f"wrote per-seed histograms to {hist_dir}")
    _print_report_table(report)
    return 0


def _print_report_table(report: ExperimentReport) -> None:
    methods = report.body["methods"]
    metrics = ("accuracy", "auc", "sensitivity", "specificity")
    name_width = max(len(m) for m in methods) + 2
    header = "method".ljust(name_width) + "".join(m.rjust(22) for m in metrics)
    print(header)
    print("-" * len(header))
    for name, entry in methods.items():
        cells = [f"{entry['mean'][m]:.4f} +/- {entry['std'][m]:.4f}".rjust(22) for m in metrics]
        print(name.ljust(name_width) + "".join(cells))


def _cmd_report(args) -> int:
    report = ExperimentReport.load(args.infile)
    if args.format == "table":
        _print_report_table(report)
    else:
        print("method,metric,mean,std")
        for name, entry in report.body["methods"].items():
            for metric in ("accuracy", "auc", "sensitivity", "specificity"):
                print(f"{name},{metric},{entry['mean'][metric]!r},{entry['std'][metric]!r}")
    return 0


def _cmd_grad_check() -> int:
    results, elapsed = verify.run_all()
    failed = 0
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{status:4s} {r.name:40s} max rel err {r.max_rel_error:.3e} "
              f"(tolerance {r.tolerance:.0e})")
        failed += 0 if r.passed else 1
    print(f"{len(results) - failed}/{len(results)} gradient checks passed in {elapsed:.1f}s")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="synthsel",
        description="Select synthetic training samples with an RL controller and "
                    "benchmark it against handcrafted baselines.",
    )
    parser.add_argument("--seed", type=int, default=None, help="override the task master seed")
    parser.add_argument("--threads", type=int, default=1, help="parallel seeds for compare")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic benchmark task")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("select", help="train the controller and emit its selection mask")
    p.add_argument("--config", required=True)
    p.add_argument("--algorithm", choices=("ppo", "reinforce"), default=None)
    p.add_argument("--controller", choices=("transformer", "gru", "gru-attn"), default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--log", default=None, help="append per-iteration JSON lines here")
    p.add_argument("--histogram", default=None, help="write selection distance histogram CSV")
    p.add_argument("--bins", type=int, default=20)

    p = sub.add_parser("compare", help="run all arms over the configured seeds")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--histogram-dir", default=None)
    p.add_argument("--bins", type=int, default=20)

    p = sub.add_parser("report", help="pretty-print a comparison report")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--format", choices=("table", "csv"), default="table")

    sub.add_parser("grad-check", help="run the gradient verification suite")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "gen-data":
            return _cmd_gen_data(args, args.seed)
        if args.command == "select":
            return _cmd_select(args, args.seed)
        if args.command == "compare":
            return _cmd_compare(args, args.seed, args.threads)
        if args.command == "report":
            return _cmd_report(args)
        if args.command == "grad-check":
            return _cmd_grad_check()
        raise AssertionError(f"unhandled command {args.command}")
    except SynthselError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
