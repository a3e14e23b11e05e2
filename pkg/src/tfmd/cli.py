"""Command-line front end for the diagnosis pipeline.

Subcommands mirror the pipeline stages: gen, render, cv, compare, run-all.
Failures exit nonzero and print a one-line JSON error object to stderr so
callers can parse the reason.  TFMD_THREADS caps fold-level parallelism.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import cnn, pipeline
from .motorsim import MotorSpec, DatasetManifest, generate_dataset
from .tfr import Method, TransformConfig

METHOD_CHOICES = [m.code.lower() for m in Method]


def _method(arg: str) -> Method:
    return Method.from_code(arg.upper())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tfmd",
        description="Motor-fault diagnosis from STFT-variant time-frequency images.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic signal corpus")
    p.add_argument("--config", help="motor spec JSON (defaults used if omitted)")
    p.add_argument("--per-cell", type=int, default=20,
                   help="signals per (class, load) cell; 150 = full scale")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("render", help="render one method's image corpus")
    p.add_argument("--method", required=True, choices=METHOD_CHOICES)
    p.add_argument("--in", dest="in_dir", required=True,
                   help="signal corpus directory (contains manifest.json)")
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--floor-db", type=float, default=-80.0)
    p.add_argument("--freq-max", type=float, default=500.0,
                   help="keep 0..freq-max Hz; <= 0 keeps the full band")

    p = sub.add_parser("cv", help="cross-validate the CNN on a rendered corpus")
    p.add_argument("--images", required=True)
    p.add_argument("--method", choices=METHOD_CHOICES,
                   help="must match the corpus if given")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--out", required=True)

    p = sub.add_parser("compare", help="tabulate EvalReports")
    p.add_argument("--reports", required=True, help="directory of report JSONs")
    p.add_argument("--out", required=True,
                   help="output table path; .json and .csv are both written")

    p = sub.add_parser("run-all", help="full pipeline from one config")
    p.add_argument("--config", help="run config JSON (defaults used if omitted)")
    p.add_argument("--out", required=True)
    return parser


def _cmd_gen(args) -> dict:
    spec = MotorSpec.from_file(args.config) if args.config else MotorSpec()
    manifest = generate_dataset(spec, args.per_cell, args.seed, args.out)
    return {"signals": len(manifest.entries), "out": args.out}


def _cmd_render(args) -> dict:
    manifest = DatasetManifest.load(Path(args.in_dir) / "manifest.json")
    freq_range = (0.0, args.freq_max) if args.freq_max > 0 else None
    pipeline.render_corpus(
        manifest, args.in_dir, _method(args.method), args.out,
        TransformConfig(), size=args.size, floor_db=args.floor_db,
        freq_range_hz=freq_range,
    )
    return {"images": len(manifest.entries), "out": args.out}


def _cmd_cv(args) -> dict:
    corpus = pipeline.load_image_corpus(args.images)
    if args.method and corpus.method != args.method.upper():
        raise ValueError(
            f"corpus was rendered with {corpus.method}, not {args.method.upper()}"
        )
    cfg = cnn.TrainConfig(
        learning_rate=args.learning_rate,
        batch_size=args.batch_size,
        epochs=args.epochs,
        seed=args.seed,
    )
    out = Path(args.out)
    report = pipeline.cross_validate(
        corpus, cfg, k=args.k, seed=args.seed, artifacts_dir=out / "cv"
    )
    out.mkdir(parents=True, exist_ok=True)
    report.save(out / f"{corpus.method}.json")
    return {
        "method": corpus.method,
        "mean_accuracy": report.mean_accuracy,
        "std_accuracy": report.std_accuracy,
        "failed_folds": len(report.failed_folds),
        "report": str(out / f"{corpus.method}.json"),
    }


def _cmd_compare(args) -> dict:
    paths = sorted(Path(args.reports).glob("*.json"))
    reports = [pipeline.EvalReport.load(p) for p in paths]
    table = pipeline.compare_methods(reports)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.with_suffix(".json").write_text(json.dumps(table, sort_keys=True, indent=1))
    out.with_suffix(".csv").write_text(pipeline.comparison_to_csv(table))
    print(pipeline.comparison_to_text(table), end="")
    return {"methods": [r.method for r in reports], "out": str(out.with_suffix(".json"))}


def _cmd_run_all(args) -> dict:
    cfg = (pipeline.RunConfig.from_file(args.config) if args.config
           else pipeline.RunConfig())
    log = pipeline.run_all(cfg, args.out)
    failed = [s for s in log["stages"] if s["status"] == "failed"]
    if failed:
        raise RuntimeError(f"{len(failed)} stage(s) failed; see run_log.json")
    return {"out": args.out, "elapsed_s": log["elapsed_s"],
            "stages": len(log["stages"])}


_COMMANDS = {
    "gen": _cmd_gen,
    "render": _cmd_render,
    "cv": _cmd_cv,
    "compare": _cmd_compare,
    "run-all": _cmd_run_all,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        result = _COMMANDS[args.command](args)
    except Exception as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1
    print(json.dumps({"ok": True, **result}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
