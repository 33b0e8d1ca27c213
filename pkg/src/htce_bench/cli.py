"""Command line entry point: ``htce-bench {run,simulate,train,describe}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import architecture, harness
from .htce_blocks import Ablation
from .learners import VARIANTS, TrainConfig, save_model, train_baseline, train_htce
from .simbench import SimConfig, benchmark_to_csv, load_covariates_csv, simulate

ABLATIONS = ("full", "no_po_sharing", "no_orth_z", "no_orth_po")


def _load_sim(path: str | None, covariates: str | None = None, schema: str | None = None):
    config = SimConfig.from_json(Path(path).read_text()) if path else SimConfig()
    x = None
    if covariates:
        x, partition, _ = load_covariates_csv(covariates, schema)
        config = replace(config, d_full=x.shape[1], partition=partition or config.partition)
    return config, x


def cmd_run(args) -> int:
    spec = harness.ExperimentSpec.from_json(args.spec)

    def progress(i, n, rec):
        status = "FAILED " + rec.error if rec.failed else f"pehe={rec.pehe:.4f}"
        print(f"[{i}/{n}] {rec.sweep_value} {rec.learner}/{rec.method} seed={rec.seed} {status} "
              f"({rec.wallclock_s:.1f}s)", file=sys.stderr, flush=True)

    report = harness.run_experiment(spec, cache_dir=args.cache, workers=args.workers, progress=progress)
    paths = harness.write_run_outputs(report, args.out)
    for sv in dict.fromkeys(a.sweep_value for a in report.aggregates):
        print(f"sweep value: {sv}")
        print(harness.table(report, sv))
    print(f"wrote {', '.join(str(p) for p in paths.values())}")
    return 1 if report.failures else 0


def cmd_simulate(args) -> int:
    config, x = _load_sim(args.config, args.covariates, args.schema)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    data = simulate(config, covariates=x)
    n = benchmark_to_csv(data, args.out)
    print(f"wrote {n} rows to {args.out}")
    return 0


def cmd_train(args) -> int:
    config, x = _load_sim(args.config, args.covariates, args.schema)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    data = simulate(config, covariates=x)
    overrides = {k: v for k, v in (("max_epochs", args.max_epochs), ("patience", args.patience)) if v is not None}
    cfg = TrainConfig(seed=config.seed, **overrides)
    if args.mode == "htce":
        ablation = Ablation() if args.ablation == "full" else Ablation.named(args.ablation)
        model = train_htce(args.learner, data.source, data.target, cfg, ablation=ablation)
    else:
        if args.ablation != "full":
            raise SystemExit("--ablation only applies to --mode htce")
        source = data.source if args.mode == "shared" else None
        model = train_baseline(data.target, args.learner, args.mode, cfg, source=source)
    test = data.target.test
    value = harness.pehe(model.predict_cate(test.x), test.tau)
    result = {"learner": args.learner, "mode": args.mode, "ablation": args.ablation,
              "seed": config.seed, "pehe": value}
    if args.save:
        save_model(model, args.save)
        result["model"] = args.save
    print(json.dumps(result))
    return 0


def cmd_describe(args) -> int:
    print(json.dumps(architecture.describe(), indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="htce-bench", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment grid")
    p.add_argument("--spec", required=True, help="experiment spec JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--cache", default=None, help="directory of per-cell results for resuming")
    p.add_argument("--workers", type=int, default=None, help="parallel cells (default HTCE_BENCH_THREADS or CPUs)")
    p.set_defaults(func=cmd_run)

    def sim_args(p):
        p.add_argument("--config", default=None, help="simulation config JSON (defaults if omitted)")
        p.add_argument("--covariates", default=None, help="CSV of real covariates (header row)")
        p.add_argument("--schema", default=None, help="JSON naming shared/private_source/private_target columns")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")

    p = sub.add_parser("simulate", help="write one simulated benchmark instance as CSV")
    sim_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train one learner on a simulated instance and report PEHE")
    sim_args(p)
    p.add_argument("--learner", choices=VARIANTS, required=True)
    p.add_argument("--mode", choices=("htce", "target", "shared"), default="htce")
    p.add_argument("--ablation", choices=ABLATIONS, default="full")
    p.add_argument("--max-epochs", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--save", default=None, help="write the model manifest to this JSON file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("describe", help="print architecture and optimiser constants")
    p.set_defaults(func=cmd_describe)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"htce-bench: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
