"""Experiment orchestration: train, score, evaluate, sweep, histogram, compare."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

import isomax
from isomax import datasets
from isomax.config import DATASET_KEYS, ExperimentConfig
from isomax.errors import ContractError, IsoMaxError
from isomax.heads import IsoMaxHead, SoftMaxHead
from isomax.metrics import detection_metrics
from isomax.network import embed, init_params, load_checkpoint, mlp_specs, save_checkpoint, train
from isomax.numeric import Rng, argmax_rows, entropy
from isomax.scoring import inference_probs, read_score_csv, score, score_examples, write_score_csv

log = logging.getLogger(__name__)

SUMMARY_METRICS = (
    "accuracy",
    "auroc",
    "dtacc",
    "tnr_at_tpr95",
    "fpr_at_tpr90",
    "mean_in_entropy",
    "mean_out_entropy",
)


class ExperimentError(IsoMaxError):
    """A module error annotated with the experiment step that raised it."""


# -- data --------------------------------------------------------------------


def build_pair(cfg: ExperimentConfig, seed: int) -> datasets.OodPair:
    """Assemble the standardized in/out split for one seed."""
    if cfg.dataset == "synthetic":
        pair = datasets.synthetic_pair(
            seed,
            n_classes=cfg.n_classes,
            per_class=cfg.per_class,
            dim=cfg.dim,
            radius=cfg.radius,
            sigma=cfg.sigma,
            ring_min=cfg.ring_min,
            ring_max=cfg.ring_max,
            ood_count=cfg.ood_count,
            train_fraction=cfg.train_fraction,
            min_separation=cfg.min_separation,
        )
    elif cfg.dataset == "csv":
        full = datasets.load_csv(cfg.train_path, cfg.label_column)
        if cfg.test_path:
            train_set, test_set = full, datasets.load_csv(cfg.test_path, cfg.label_column)
        else:
            train_set, test_set = datasets.split(full, cfg.train_fraction, seed)
        out = datasets.load_unlabeled_csv(cfg.out_path, cfg.label_column)
        pair = datasets.OodPair(train_set, test_set, out)
    else:
        train_set = datasets.load_idx(cfg.train_images, cfg.train_labels)
        test_set = datasets.load_idx(cfg.test_images, cfg.test_labels)
        if cfg.out_labels:
            out = datasets.load_idx(cfg.out_images, cfg.out_labels).features
        else:
            out = datasets.load_idx_images(cfg.out_images)
        if cfg.max_train:
            train_set = datasets.subsample(train_set, cfg.max_train, seed)
        if cfg.max_test:
            test_set = datasets.subsample(test_set, cfg.max_test, seed + 1)
        if cfg.max_out and cfg.max_out < len(out):
            out = out[np.sort(Rng(seed + 2).permutation(len(out))[: cfg.max_out])]
        n_classes = max(train_set.n_classes, test_set.n_classes)
        pair = datasets.OodPair(
            datasets.LabeledSet(train_set.features, train_set.labels, n_classes),
            datasets.LabeledSet(test_set.features, test_set.labels, n_classes),
            out,
        )
    return datasets.standardize(pair)


# -- one seed ----------------------------------------------------------------


@dataclass
class SeedRun:
    seed: int
    pair: datasets.OodPair
    params: object
    head: object
    history: list


def make_head(cfg, n_classes, rng):
    if cfg.head == "isomax":
        return IsoMaxHead.zeros(n_classes, cfg.embedding_dim, cfg.entropic_scale)
    return SoftMaxHead.init(n_classes, cfg.embedding_dim, rng)


def train_seed(cfg: ExperimentConfig, seed: int, pair=None) -> SeedRun:
    """Train backbone and head on ``pair.in_train`` only."""
    if pair is None:
        pair = build_pair(cfg, seed)
    root = Rng(seed)
    specs = mlp_specs(pair.in_train.dim, cfg.hidden, cfg.embedding_dim)
    params = init_params(specs, root.spawn(1))
    head = make_head(cfg, pair.n_classes, root.spawn(2))
    history = train(
        params,
        head,
        pair.in_train.features,
        pair.in_train.labels,
        cfg.train_config(seed),
        rng=root.spawn(3),
    )
    return SeedRun(seed, pair, params, head, history)


def predict_probs(run_or_params, head, features, temperature=1.0, retain_scale=False):
    params = run_or_params.params if isinstance(run_or_params, SeedRun) else run_or_params
    return inference_probs(head, embed(params, features), temperature, retain_scale)


def evaluate_model(params, head, pair, score_kind="entropic", temperature=1.0):
    """Score in-test and OOD test data; return (metrics, in_examples, out_examples)."""
    p_in = inference_probs(head, embed(params, pair.in_test.features), temperature)
    p_out = inference_probs(head, embed(params, pair.out_test), temperature)
    ex_in = score_examples(p_in, score_kind)
    ex_out = score_examples(p_out, score_kind)
    m = detection_metrics((score(p_in, score_kind), score(p_out, score_kind)))
    result = {
        "accuracy": float(np.mean(argmax_rows(p_in) == pair.in_test.labels)),
        "auroc": m["auroc"],
        "dtacc": m["dtacc"],
        "tnr_at_tpr95": m["tnr_at_tpr95"],
        "fpr_at_tpr90": m["fpr_at_tpr90"],
        "mean_in_entropy": float(np.mean(entropy(p_in))),
        "mean_out_entropy": float(np.mean(entropy(p_out))),
    }
    if isinstance(head, IsoMaxHead):
        # Same model with the entropic scale left inside the logits.
        r_in = inference_probs(head, embed(params, pair.in_test.features), temperature, True)
        r_out = inference_probs(head, embed(params, pair.out_test), temperature, True)
        result["scale_retained"] = {
            "mean_in_entropy": float(np.mean(entropy(r_in))),
            "mean_out_entropy": float(np.mean(entropy(r_out))),
            "predictions_match": bool(np.array_equal(argmax_rows(r_in), argmax_rows(p_in))),
        }
    return result, ex_in, ex_out


# -- reports -----------------------------------------------------------------


def summarize(per_seed):
    summary = {}
    for key in SUMMARY_METRICS:
        vals = np.array([r[key] for r in per_seed], dtype=np.float64)
        entry = {"mean": float(vals.mean())}
        if vals.size >= 2:
            entry["std"] = float(vals.std(ddof=1))
        summary[key] = entry
    return summary


def make_report(cfg, per_seed):
    return {
        "config": cfg.to_dict(),
        "provenance": {
            "config_hash": cfg.config_hash(),
            "seeds": list(cfg.seeds),
            "code_version": isomax.__version__,
        },
        "label": variant_label(cfg),
        "per_seed": per_seed,
        "summary": summarize(per_seed),
    }


def variant_label(cfg):
    head = "IsoMax" if cfg.head == "isomax" else "SoftMax"
    return f"{head}+{'ES' if cfg.score == 'entropic' else 'MPS'}"


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")


def run_experiment(cfg: ExperimentConfig, write=True):
    """Train and evaluate one model per seed and aggregate a report.

    With ``write`` the report, per-seed score CSVs and checkpoints go to
    ``cfg.output_dir``.
    """
    out_dir = Path(cfg.output_dir)
    if write:
        out_dir.mkdir(parents=True, exist_ok=True)
    per_seed = []
    for seed in cfg.seeds:
        step = "building data"
        try:
            pair = build_pair(cfg, seed)
            step = "training"
            run = train_seed(cfg, seed, pair)
            step = "evaluating"
            result, ex_in, ex_out = evaluate_model(
                run.params, run.head, pair, cfg.score, cfg.inference_temperature
            )
        except IsoMaxError as exc:
            raise ExperimentError(
                f"{variant_label(cfg)} seed {seed}: {step} failed: {type(exc).__name__}: {exc}"
            ) from exc
        result = {"seed": seed, **result, "final_train_loss": run.history[-1] if run.history else None}
        per_seed.append(result)
        log.info("seed %d: accuracy %.4f auroc %.4f", seed, result["accuracy"], result["auroc"])
        if write:
            write_score_csv(out_dir / f"scores_seed{seed}.csv", ex_in, ex_out)
            save_checkpoint(out_dir / f"checkpoint_seed{seed}.eod", run.params, run.head)
    report = make_report(cfg, per_seed)
    if write:
        write_json(out_dir / "report.json", report)
    return report


def evaluate_checkpoint(cfg, checkpoint, seed):
    """Re-score a saved model on the data the config builds for ``seed``."""
    params, head = load_checkpoint(checkpoint)
    pair = build_pair(cfg, seed)
    return evaluate_model(params, head, pair, cfg.score, cfg.inference_temperature)


def metrics_from_score_csv(path):
    ins, outs = read_score_csv(path)
    return detection_metrics(([e.score for e in ins], [e.score for e in outs]))


# -- histograms --------------------------------------------------------------


HISTOGRAM_HEADER = [
    "bin",
    "entropy_lo",
    "entropy_hi",
    "entropy_in",
    "entropy_out",
    "max_prob_lo",
    "max_prob_hi",
    "max_prob_in",
    "max_prob_out",
]


def emit_histograms(in_examples, out_examples, bins, n_classes):
    """Shared-edge histogram rows of entropy and max probability, in vs out.

    Entropy bins span [0, log N] and max-probability bins span [1/N, 1].
    """
    if bins < 2:
        raise ContractError(f"need at least 2 bins, got {bins}")
    if not in_examples and not out_examples:
        raise ContractError("no scored examples to histogram")
    if n_classes < 2:
        raise ContractError("n_classes must be >= 2")
    h_edges = np.linspace(0.0, math.log(n_classes), bins + 1)
    p_edges = np.linspace(1.0 / n_classes, 1.0, bins + 1)

    def counts(values, edges):
        # Clip so float noise at the range ends stays in the outer bins.
        v = np.clip(np.asarray(values, dtype=np.float64), edges[0], edges[-1])
        return np.histogram(v, bins=edges)[0]

    h_in = counts([e.entropy for e in in_examples], h_edges)
    h_out = counts([e.entropy for e in out_examples], h_edges)
    p_in = counts([e.max_prob for e in in_examples], p_edges)
    p_out = counts([e.max_prob for e in out_examples], p_edges)
    return [
        {
            "bin": b,
            "entropy_lo": float(h_edges[b]),
            "entropy_hi": float(h_edges[b + 1]),
            "entropy_in": int(h_in[b]),
            "entropy_out": int(h_out[b]),
            "max_prob_lo": float(p_edges[b]),
            "max_prob_hi": float(p_edges[b + 1]),
            "max_prob_in": int(p_in[b]),
            "max_prob_out": int(p_out[b]),
        }
        for b in range(bins)
    ]


def histograms_from_csv(score_csv_in, score_csv_out=None, bins=20, n_classes=None):
    """Histogram score dumps.

    With one file, rows are split by their ``origin`` column. With two, every
    row of the first counts as in-distribution and every row of the second
    as out-of-distribution.
    """
    ins, outs = read_score_csv(score_csv_in)
    if score_csv_out is not None:
        ins = ins + outs
        outs = sum(read_score_csv(score_csv_out), [])
    if n_classes is None:
        n_classes = 1 + max(e.predicted_class for e in ins + outs)
    return emit_histograms(ins, outs, bins, n_classes)


def write_histogram_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=HISTOGRAM_HEADER, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


# -- entropic-scale sweep ----------------------------------------------------


SWEEP_HEADER = ["scale", "temperature", "accuracy", "auroc", "mean_in_entropy", "mean_out_entropy"]


def _scale_tag(x):
    return f"{x:g}".replace(".", "p")


def entropic_scale_sweep(cfg, scales, temperatures=None, bins=20, write=True):
    """One IsoMax+ES experiment per entropic scale (and inference temperature).

    Returns seed-averaged table rows; with ``write``, also the sweep CSV, the
    per-run reports/scores, and one entropy/max-prob histogram per run.
    """
    scales = list(scales)
    if not scales or any(not s > 0 for s in scales):
        raise ContractError("scales must be a non-empty list of positive values")
    temperatures = list(temperatures) if temperatures else [cfg.inference_temperature]
    base = Path(cfg.output_dir)
    rows = []
    reports = {}
    for s in scales:
        for t in temperatures:
            sub = base / f"scale_{_scale_tag(s)}" / f"temp_{_scale_tag(t)}"
            run_cfg = cfg.replace(
                head="isomax",
                score="entropic",
                entropic_scale=float(s),
                inference_temperature=float(t),
                output_dir=str(sub),
            )
            report = run_experiment(run_cfg, write=write)
            reports[(s, t)] = report
            summ = report["summary"]
            rows.append(
                {
                    "scale": float(s),
                    "temperature": float(t),
                    **{k: summ[k]["mean"] for k in SWEEP_HEADER[2:]},
                }
            )
            if write:
                ins, outs = [], []
                for seed in run_cfg.seeds:
                    a, b = read_score_csv(sub / f"scores_seed{seed}.csv")
                    ins += a
                    outs += b
                hist = emit_histograms(ins, outs, bins, _n_classes(run_cfg))
                write_histogram_csv(sub / "histograms.csv", hist)
    if write:
        base.mkdir(parents=True, exist_ok=True)
        write_sweep_csv(base / "sweep.csv", rows)
    return rows, reports


def _n_classes(cfg):
    if cfg.dataset == "synthetic":
        return cfg.n_classes
    return build_pair(cfg, cfg.seeds[0]).n_classes


def write_sweep_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_HEADER, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(r[k]) for k in SWEEP_HEADER})


# -- comparison --------------------------------------------------------------


def _check_comparable(a, b):
    ca, cb = a["config"], b["config"]
    diff = [k for k in DATASET_KEYS if ca.get(k) != cb.get(k)]
    if diff:
        raise ContractError(f"reports use different datasets (differing keys: {', '.join(diff)})")
    if ca["seeds"] != cb["seeds"]:
        raise ContractError("reports use different seed lists")


def compare_report(report_a, report_b):
    """Per-metric difference ``a - b`` of the seed-averaged summaries."""
    _check_comparable(report_a, report_b)
    return {
        k: report_a["summary"][k]["mean"] - report_b["summary"][k]["mean"] for k in SUMMARY_METRICS
    }


def compare_reports(reports):
    """Side-by-side table for two or three reports, deltas taken against the first."""
    if not 2 <= len(reports) <= 3:
        raise ContractError("compare needs two or three reports")
    base = reports[0]
    columns = []
    for r in reports:
        _check_comparable(base, r)
        columns.append(
            {
                "label": r.get("label", "?"),
                "means": {k: r["summary"][k]["mean"] for k in SUMMARY_METRICS},
                "delta_vs_first": compare_report(r, base),
            }
        )
    return {"seeds": base["config"]["seeds"], "columns": columns}


def format_comparison(table):
    labels = [c["label"] for c in table["columns"]]
    width = max(12, *(len(lbl) + 2 for lbl in labels))
    lines = ["metric".ljust(18) + "".join(lbl.rjust(width) for lbl in labels)]
    for k in SUMMARY_METRICS:
        cells = []
        for i, c in enumerate(table["columns"]):
            cell = f"{c['means'][k]:.4f}"
            if i:
                cell += f" ({c['delta_vs_first'][k]:+.4f})"
            cells.append(cell.rjust(width + (10 if i else 0)))
        lines.append(k.ljust(18) + "".join(cells))
    return "\n".join(lines)
