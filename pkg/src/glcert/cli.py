"""Command-line entry points.

Subcommands map onto the experiment drivers plus small dataset utilities.
Configuration comes from an INI file (``--config``); ``--out`` overrides the
output directory. Exit codes: 0 all runs completed and every hard invariant
(budget compliance, maximum principle, solver certificate) held; 1 a run
finished but an invariant was violated; 2 calibration found no feasible
constants (the report file is still written); 3 configuration or data errors.
"""

from __future__ import annotations

import argparse
import os
import sys

from .attack import ATTACK_KINDS, AttackError, AttackSpec, perturbed_to_csv, run_attack
from .certify import CalibrationError, CertifyError
from .data import DataError, dataset_from_csv, dataset_to_csv
from .defend import DefenseError, robust_prune, select_separation
from .experiments import (ExperimentConfig, ExperimentError, config_from_ini,
                          config_hash, make_splits, run_certify_experiment,
                          run_label_sweep, run_robust_curves, run_timing)
from .models import load_model
from .pipeline import Pipeline, PipelineConfig
from .solve import SolveError

__all__ = ["main"]

EXIT_OK = 0
EXIT_INVARIANT = 1
EXIT_CALIBRATION = 2
EXIT_CONFIG = 3


def _experiment_config(args, mode) -> ExperimentConfig:
    overrides = {"mode": mode, "out_dir": args.out}
    if args.config:
        return config_from_ini(args.config, **overrides)
    kwargs = {k: v for k, v in overrides.items() if v is not None}
    return ExperimentConfig(**kwargs)


def _report_violations(violations) -> int:
    if violations:
        for v in violations:
            print(f"INVARIANT VIOLATION: {v}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


def _cmd_gen_data(args) -> int:
    cfg = _experiment_config(args, "certify")
    os.makedirs(cfg.out_dir, exist_ok=True)
    lc = cfg.labeled_counts[0] if cfg.labeled_counts else None
    train, test, val = make_splits(cfg, cfg.data_seed, lc)
    for name, ds in (("train", train), ("test", test), ("validation", val)):
        path = os.path.join(cfg.out_dir, f"{cfg.dataset}_{name}.csv")
        dataset_to_csv(ds, path)
        print(f"wrote {path} ({ds.n} points, {ds.n_labeled} labeled)")
    print(f"config {config_hash(cfg)}")
    return EXIT_OK


def _cmd_certify(args) -> int:
    cfg = _experiment_config(args, "certify")
    _, summary, violations = run_certify_experiment(cfg)
    for row in summary:
        print(f"labeled_count={row[0]} k={row[1]} r_max={row[2]:.4g} "
              f"clean={row[5]:.1f}+-{row[6]:.1f}")
    print(f"artifacts in {cfg.out_dir} (config {config_hash(cfg)})")
    return _report_violations(violations)


def _cmd_curves(args) -> int:
    cfg = _experiment_config(args, "robust_curve")
    _, violations = run_robust_curves(cfg)
    print(f"curves written to {cfg.out_dir} (config {config_hash(cfg)})")
    return _report_violations(violations)


def _cmd_label_sweep(args) -> int:
    cfg = _experiment_config(args, "label_sweep")
    _, (_, trends), violations = run_label_sweep(cfg)
    for variant, kind, r, rho in trends:
        print(f"trend {variant} {kind} r={r:g}: spearman={rho}")
    return _report_violations(violations)


def _cmd_timing(args) -> int:
    cfg = _experiment_config(args, "timing")
    rows = run_timing(cfg)
    print("k gl_seconds knn_seconds gl>=knn")
    for row in rows:
        print(f"{row[0]} {row[1]:.4f} {row[2]:.4f} {bool(row[6])}")
    print("note: absolute numbers are host-specific; only ordering is meaningful")
    return EXIT_OK


def _cmd_prune(args) -> int:
    train = dataset_from_csv(args.input)
    if args.a is not None:
        a = args.a
    else:
        if not args.validation:
            raise ExperimentError("--grid needs --validation for scoring")
        val = dataset_from_csv(args.validation)
        pipe = Pipeline(PipelineConfig(graph_k=args.graph_k))

        def ev(pruned, v):
            return pipe.gl_accuracy(pruned, v.points, v.labels)

        a = select_separation(train, val, args.grid, ev)
        print(f"selected separation a={a:g}")
    pruned = robust_prune(train, a)
    dataset_to_csv(pruned, args.output)
    print(f"kept {pruned.n} of {train.n} points; wrote {args.output}")
    return EXIT_OK


def _cmd_attack(args) -> int:
    ds = dataset_from_csv(args.input)
    surrogate = load_model(args.model) if args.model else None
    spec = AttackSpec(args.kind, args.r, surrogate, args.seed,
                      args.direction, args.scope)
    reference = dataset_from_csv(args.reference) if args.reference else ds
    pert = run_attack(spec, ds, reference=reference)
    perturbed_to_csv(pert, args.output)
    print(f"max shift {pert.max_shift():.6g} (budget {args.r:g}); "
          f"wrote {args.output}")
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="glcert",
        description="Graph Laplacian classification with certified "
                    "adversarial robustness: experiments and utilities.")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="INI configuration file")
        sp.add_argument("--out", help="output directory override")

    with_config(sub.add_parser("gen-data", help="write dataset CSV splits"))
    with_config(sub.add_parser("certify",
                               help="calibrate constants and build the "
                                    "certification accuracy table"))
    with_config(sub.add_parser("curves",
                               help="robust accuracy curves for all "
                                    "classifier variants"))
    with_config(sub.add_parser("label-sweep",
                               help="robustness versus labeled-count sweep"))
    with_config(sub.add_parser("timing",
                               help="graph solve vs kNN timing comparison"))

    pr = sub.add_parser("prune", help="robustly prune a dataset CSV")
    pr.add_argument("--input", required=True)
    pr.add_argument("--output", required=True)
    pr.add_argument("--a", type=float, default=None,
                    help="separation distance; omit to search --grid")
    pr.add_argument("--grid", type=float, nargs="+",
                    default=(0.05, 0.1, 0.2, 0.4))
    pr.add_argument("--validation", help="validation CSV for --grid scoring")
    pr.add_argument("--graph-k", type=int, default=10, dest="graph_k")

    at = sub.add_parser("attack", help="perturb a dataset CSV")
    at.add_argument("--input", required=True)
    at.add_argument("--output", required=True)
    at.add_argument("--kind", choices=ATTACK_KINDS, default="direct")
    at.add_argument("--r", type=float, required=True)
    at.add_argument("--seed", type=int, default=0)
    at.add_argument("--direction", choices=("paper", "toward_opponent"),
                    default="paper")
    at.add_argument("--scope", choices=("unlabeled", "all"),
                    default="unlabeled")
    at.add_argument("--model", help="saved surrogate for gradient attacks")
    at.add_argument("--reference",
                    help="reference dataset CSV for the nearest-opposite "
                         "attack (defaults to the input)")
    return p


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "certify": _cmd_certify,
    "curves": _cmd_curves,
    "label-sweep": _cmd_label_sweep,
    "timing": _cmd_timing,
    "prune": _cmd_prune,
    "attack": _cmd_attack,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except CalibrationError as exc:
        print(f"calibration failed: {exc}", file=sys.stderr)
        return EXIT_CALIBRATION
    except (ExperimentError, DataError, CertifyError, AttackError,
            DefenseError, SolveError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
