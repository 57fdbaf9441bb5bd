"""Command-line surface: compute, rank, search, synth.

Exit codes: 0 ok, 2 partial metric failure, 3 missing ground truth,
4 config error, 1 unexpected.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import consistency, search, synth_bench
from .bundle_io import (
    BundleFormatError,
    BundleSet,
    BundleValidationError,
    read_bundle,
    write_bundle,
)
from .metrics import ALL_METRICS, compute_all

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_PARTIAL = 2
EXIT_NO_GROUND_TRUTH = 3
EXIT_CONFIG = 4


class ConfigError(ValueError):
    pass


def _default_seed() -> int:
    env = os.environ.get("UDA_SELECT_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"UDA_SELECT_SEED is not an integer: {env!r}")
    return 17


def _emit(text: str, out_path):
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _dump_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def _compute_kwargs(args) -> dict:
    kw = {"seed": args.seed}
    if args.snd_tau is not None:
        kw["snd_tau"] = args.snd_tau
    if args.probe_steps is not None:
        kw["probe_steps"] = args.probe_steps
    if args.folds is not None:
        kw["n_folds"] = args.folds
    if args.metric:
        for m in args.metric:
            if m not in ALL_METRICS:
                raise ConfigError(f"unknown metric {m!r}")
        kw["metrics"] = args.metric
    return kw


def cmd_compute(args) -> int:
    kw = _compute_kwargs(args)
    doc = {}
    any_error = False
    for path in args.bundles:
        bundle = read_bundle(path)
        scores, errors = compute_all(bundle, **kw)
        entry = {
            s.metric_name: {"value": s.value, "details": s.details} for s in scores
        }
        if errors:
            any_error = True
            entry["errors"] = {name: str(err) for name, err in sorted(errors.items())}
        doc[bundle.model_id] = entry
    _emit(_dump_json(doc), args.out)
    return EXIT_PARTIAL if any_error else EXIT_OK


def cmd_rank(args) -> int:
    kw = _compute_kwargs(args)
    bundles = [read_bundle(p) for p in args.bundles]
    bundle_set = BundleSet(bundles=tuple(bundles))
    for b in bundles:
        if b.true_target_accuracy is None:
            print(
                f"error: bundle {b.model_id!r} lacks true_target_accuracy",
                file=sys.stderr,
            )
            return EXIT_NO_GROUND_TRUTH
    scores = {}
    for b in bundles:
        metric_scores, _errors = compute_all(b, **kw)
        scores[b.model_id] = {s.metric_name: s.value for s in metric_scores}
    report = consistency.consistency_report(bundle_set, scores)
    if args.format == "csv":
        _emit(report.to_csv(), args.out)
    elif args.format == "table":
        _emit(report.to_table(), args.out)
    else:
        doc = {
            g.group: {
                r.metric_name: {
                    "corr": r.corr,
                    "dev": r.dev,
                    "best_model": r.best_model,
                }
                for r in g.rows
            }
            for g in report.groups
        }
        _emit(_dump_json(doc), args.out)
    return EXIT_OK


def cmd_search(args) -> int:
    metric = args.metric[0] if args.metric else "acm"
    if metric not in ALL_METRICS:
        raise ConfigError(f"unknown metric {metric!r}")
    if args.synthetic:
        if args.synthetic not in synth_bench.FAMILIES:
            raise ConfigError(f"unknown family {args.synthetic!r}")
        space = search.synthetic_space()
        objective = search.synthetic_objective(
            args.synthetic,
            metric=metric,
            seed=args.seed,
            probe_steps=args.probe_steps or 200,
        )
    else:
        if not args.hp_space or not args.command:
            raise ConfigError("search needs --hp-space and a trainer command, or --synthetic")
        try:
            with open(args.hp_space) as fh:
                space = search.HyperparamSpace.from_json(fh.read())
        except (OSError, KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"bad hyperparameter space: {exc}")
        objective = search.command_objective(args.command, metric=metric, seed=args.seed)
    best, trials = search.run_search(
        space,
        objective,
        n_trials=args.trials,
        seed=args.seed,
        history_path=args.history,
    )
    doc = {
        "best": {
            "trial_id": best.trial_id,
            "assignment": best.assignment,
            "final_value": best.final_value,
        },
        "n_trials": len(trials),
        "n_complete": sum(1 for t in trials if t.state == "complete"),
        "n_pruned": sum(1 for t in trials if t.state == "pruned"),
        "n_failed": sum(1 for t in trials if t.state == "failed"),
    }
    _emit(_dump_json(doc), args.out)
    return EXIT_OK


def cmd_synth(args) -> int:
    family = args.synthetic or "alignment"
    if family not in synth_bench.FAMILIES:
        raise ConfigError(f"unknown family {family!r}")
    if args.scenario:
        with open(args.scenario) as fh:
            scenario = synth_bench.Scenario.from_json(fh.read())
    else:
        scenario = synth_bench.default_scenario(family, seed=args.seed)
    out_dir = args.out or "."
    os.makedirs(out_dir, exist_ok=True)
    manifest = {"family": family, "seed": args.seed, "models": []}
    for i, bundle in enumerate(
        synth_bench.model_sweep(scenario, family, args.n_models, base_seed=args.seed)
    ):
        path = os.path.join(out_dir, f"{bundle.model_id}.udab")
        write_bundle(bundle, path)
        manifest["models"].append(
            {
                "model_id": bundle.model_id,
                "path": path,
                "true_target_accuracy": bundle.true_target_accuracy,
            }
        )
    manifest_path = os.path.join(out_dir, "manifest.json")
    with open(manifest_path, "w") as fh:
        fh.write(_dump_json(manifest))
    sys.stdout.write(_dump_json({"manifest": manifest_path, "n_models": args.n_models}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uda-select",
        description="Label-free model selection for domain adaptation checkpoints.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p, bundles=False):
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--metric", action="append", default=None, metavar="NAME")
        p.add_argument("--snd-tau", type=float, default=None)
        p.add_argument("--probe-steps", type=int, default=None)
        p.add_argument("--folds", type=int, default=None)
        p.add_argument("--format", choices=["json", "csv", "table"], default="json")
        p.add_argument("--out", default=None)
        if bundles:
            p.add_argument("bundles", nargs="+", metavar="BUNDLE")

    p = sub.add_parser("compute", help="score bundles with every metric")
    common(p, bundles=True)
    p = sub.add_parser("rank", help="metric-vs-accuracy consistency report")
    common(p, bundles=True)
    p = sub.add_parser("search", help="label-free hyperparameter search")
    common(p)
    p.add_argument("--hp-space", default=None, metavar="JSON_PATH")
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--synthetic", default=None, metavar="FAMILY")
    p.add_argument("--history", default=None, metavar="JSONL_PATH")
    p.add_argument("command", nargs="*", metavar="TRAINER_ARG")
    p = sub.add_parser("synth", help="generate synthetic benchmark bundles")
    common(p)
    p.add_argument("--synthetic", default=None, metavar="FAMILY")
    p.add_argument("--scenario", default=None, metavar="JSON_PATH")
    p.add_argument("--n-models", type=int, default=20)
    return parser


_HANDLERS = {
    "compute": cmd_compute,
    "rank": cmd_rank,
    "search": cmd_search,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else 0
    try:
        if args.seed is None:
            args.seed = _default_seed()
        return _HANDLERS[args.subcommand](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BundleFormatError, BundleValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except consistency.MissingGroundTruthError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_GROUND_TRUTH
    except Exception as exc:  # pragma: no cover - safety net
        print(f"unexpected error: {exc}", file=sys.stderr)
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
