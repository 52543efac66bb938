"""Command line entry point: ``isomax {train,evaluate,sweep,hist,compare}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from isomax import harness
from isomax.config import ExperimentConfig, load_config
from isomax.errors import IsoMaxError
from isomax.scoring import write_score_csv


def _float_list(text):
    return [float(v) for v in text.replace(",", " ").split()]


def _load_cfg(args, **extra):
    overrides = dict(extra)
    if getattr(args, "seed", None) is not None:
        overrides["seeds"] = (args.seed,)
    if getattr(args, "out", None):
        overrides["output_dir"] = args.out
    if args.config:
        return load_config(args.config, **overrides)
    return ExperimentConfig(**overrides)


def cmd_train(args):
    cfg = _load_cfg(args)
    report = harness.run_experiment(cfg)
    _emit({"report": str(Path(cfg.output_dir) / "report.json"), "summary": report["summary"]})


def cmd_evaluate(args):
    if args.scores:
        metrics = harness.metrics_from_score_csv(args.scores)
    else:
        if not args.checkpoint:
            raise IsoMaxError("evaluate needs --scores or --checkpoint")
        cfg = _load_cfg(args)
        seed = cfg.seeds[0]
        result, ex_in, ex_out = harness.evaluate_checkpoint(cfg, args.checkpoint, seed)
        out_dir = Path(cfg.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_score_csv(out_dir / f"eval_scores_seed{seed}.csv", ex_in, ex_out)
        metrics = {"seed": seed, **result}
    if args.out and args.scores:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        harness.write_json(Path(args.out) / "metrics.json", metrics)
    _emit(metrics)


def cmd_sweep(args):
    cfg = _load_cfg(args)
    temps = _float_list(args.temperatures) if args.temperatures else None
    rows, _ = harness.entropic_scale_sweep(cfg, _float_list(args.scales), temps, bins=args.bins)
    _emit({"sweep": str(Path(cfg.output_dir) / "sweep.csv"), "rows": rows})


def cmd_hist(args):
    rows = harness.histograms_from_csv(args.scores, args.scores_out, args.bins, args.classes)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    harness.write_histogram_csv(out / "histograms.csv", rows)
    _emit({"histograms": str(out / "histograms.csv"), "bins": len(rows)})


def cmd_compare(args):
    reports = [json.loads(Path(p).read_text()) for p in args.reports]
    table = harness.compare_reports(reports)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        harness.write_json(Path(args.out) / "comparison.json", table)
    print(harness.format_comparison(table))


def _emit(obj):
    print(json.dumps(obj, indent=2))


def build_parser():
    parser = argparse.ArgumentParser(prog="isomax", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="key = value experiment file")
            p.add_argument("--seed", type=int, help="run this single seed instead of the config's list")
        p.add_argument("--out", help="output directory")
        return p

    p = common(sub.add_parser("train", help="train, score and report every seed"))
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("evaluate", help="metrics from a score CSV or a checkpoint"))
    p.add_argument("--scores", help="score CSV to turn into a metrics JSON")
    p.add_argument("--checkpoint", help="EOD1 checkpoint to re-score on the config's data")
    p.set_defaults(func=cmd_evaluate)

    p = common(sub.add_parser("sweep", help="IsoMax runs over several entropic scales"))
    p.add_argument("--scales", default="1,3,10")
    p.add_argument("--temperatures", help="inference temperatures, e.g. 0.1,1,10")
    p.add_argument("--bins", type=int, default=20)
    p.set_defaults(func=cmd_sweep)

    p = common(sub.add_parser("hist", help="entropy / max-prob histograms from score CSVs"), config=False)
    p.add_argument("--scores", required=True, help="score CSV (split by origin column)")
    p.add_argument("--scores-out", help="second CSV whose rows all count as OOD")
    p.add_argument("--classes", type=int, help="number of classes N (default: inferred)")
    p.add_argument("--bins", type=int, default=20)
    p.set_defaults(func=cmd_hist)

    p = common(sub.add_parser("compare", help="side-by-side deltas of 2 or 3 reports"), config=False)
    p.add_argument("reports", nargs="+")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except (IsoMaxError, OSError) as exc:
        line = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(line), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
