"""Inference probabilities and out-of-distribution detection scores.

All scores are oriented so that a higher value means "more in-distribution".
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from isomax.errors import ContractError, ParseError
from isomax.heads import IsoMaxHead, SoftMaxHead
from isomax.numeric import argmax_rows, as_tensor, entropy, stable_softmax, validate_distribution

SCORE_CSV_HEADER = ["example_id", "origin", "predicted_class", "max_prob", "entropy", "score"]
SCORE_KINDS = ("entropic", "max_prob")


@dataclass(frozen=True)
class ScoredExample:
    score: float
    predicted_class: int
    entropy: float
    max_prob: float


def _check_temperature(temperature):
    if not temperature > 0:
        raise ContractError(f"temperature must be positive, got {temperature}")


def isomax_inference_probs(head: IsoMaxHead, embeddings, temperature=1.0):
    """Softmax over negative distances with the entropic scale removed."""
    _check_temperature(temperature)
    return stable_softmax(-head.distances(embeddings) / temperature)


def isomax_training_probs(head: IsoMaxHead, embeddings):
    """Probabilities with the entropic scale still applied, as seen by the loss."""
    return stable_softmax(-head.entropic_scale * head.distances(embeddings))


def softmax_inference_probs(head: SoftMaxHead, embeddings, temperature=1.0):
    _check_temperature(temperature)
    return stable_softmax(head.logits(embeddings) / temperature)


def inference_probs(head, embeddings, temperature=1.0, retain_scale=False):
    if isinstance(head, IsoMaxHead):
        if retain_scale:
            _check_temperature(temperature)
            return stable_softmax(-head.entropic_scale * head.distances(embeddings) / temperature)
        return isomax_inference_probs(head, embeddings, temperature)
    if retain_scale:
        raise ContractError("only the IsoMax head has an entropic scale to retain")
    return softmax_inference_probs(head, embeddings, temperature)


def entropic_score(probs):
    """Negative entropy of each row; 0 for one-hot rows, -log N for uniform rows."""
    return -entropy(probs)


def max_prob_score(probs):
    p = as_tensor(probs, 2, "probs")
    validate_distribution(p)
    return p.max(axis=1)


def score(probs, kind="entropic"):
    if kind == "entropic":
        return entropic_score(probs)
    if kind == "max_prob":
        return max_prob_score(probs)
    raise ContractError(f"unknown score kind {kind!r}; expected one of {SCORE_KINDS}")


def score_examples(probs, kind="entropic"):
    p = as_tensor(probs, 2, "probs")
    h = entropy(p)
    mp = p.max(axis=1)
    s = -h if kind == "entropic" else score(p, kind)
    pred = argmax_rows(p)
    return [ScoredExample(float(a), int(b), float(c), float(d)) for a, b, c, d in zip(s, pred, h, mp)]


def write_score_csv(path, in_examples, out_examples):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCORE_CSV_HEADER)
        idx = 0
        for origin, rows in (("in", in_examples), ("out", out_examples)):
            for ex in rows:
                w.writerow(
                    [idx, origin, ex.predicted_class, repr(ex.max_prob), repr(ex.entropy), repr(ex.score)]
                )
                idx += 1


def read_score_csv(path):
    """Return ``(in_examples, out_examples)`` from a score dump."""
    ins, outs = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != SCORE_CSV_HEADER:
            raise ParseError(f"unexpected header {header}", path, 1)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(SCORE_CSV_HEADER):
                raise ParseError(f"expected {len(SCORE_CSV_HEADER)} fields, got {len(row)}", path, lineno)
            try:
                ex = ScoredExample(float(row[5]), int(row[2]), float(row[4]), float(row[3]))
            except ValueError as exc:
                raise ParseError(str(exc), path, lineno) from None
            if row[1] == "in":
                ins.append(ex)
            elif row[1] == "out":
                outs.append(ex)
            else:
                raise ParseError(f"origin must be 'in' or 'out', got {row[1]!r}", path, lineno)
    return ins, outs
