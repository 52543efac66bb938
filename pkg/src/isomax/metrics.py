"""Detection metrics over in-distribution (positive) and OOD (negative) scores.

Convention: a sample is declared in-distribution when ``score >= threshold``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from isomax.errors import ContractError
from isomax.numeric import as_tensor


@dataclass(frozen=True)
class ScoreSet:
    in_scores: np.ndarray
    out_scores: np.ndarray

    def __post_init__(self):
        ins = as_tensor(self.in_scores, 1, "in_scores")
        outs = as_tensor(self.out_scores, 1, "out_scores")
        if ins.size < 1 or outs.size < 1:
            raise ContractError("both in- and out-distribution score sets must be non-empty")
        object.__setattr__(self, "in_scores", ins)
        object.__setattr__(self, "out_scores", outs)

    @property
    def m(self):
        return self.in_scores.size

    @property
    def k(self):
        return self.out_scores.size


def _as_set(s):
    if isinstance(s, ScoreSet):
        return s
    ins, outs = s
    return ScoreSet(ins, outs)


def auroc(s):
    """Mann-Whitney estimate of P(in > out) + 0.5 * P(in == out)."""
    s = _as_set(s)
    ranks = rankdata(np.concatenate([s.in_scores, s.out_scores]), method="average")
    u = ranks[: s.m].sum() - s.m * (s.m + 1) / 2.0
    return float(u / (s.m * s.k))


def tpr_threshold(in_scores, tpr_target):
    """Largest threshold that keeps at least ``tpr_target`` of the positives."""
    if not 0 < tpr_target < 1:
        raise ContractError(f"tpr_target must be in (0, 1), got {tpr_target}")
    desc = np.sort(in_scores)[::-1]
    # The 1e-9 slack absorbs float error in products like 0.95 * 100.
    need = max(1, math.ceil(tpr_target * desc.size - 1e-9))
    return float(desc[need - 1])


def tnr_at_tpr(s, tpr_target=0.95):
    s = _as_set(s)
    delta = tpr_threshold(s.in_scores, tpr_target)
    return float(np.count_nonzero(s.out_scores < delta) / s.k)


def fpr_at_tpr(s, tpr_target=0.90):
    s = _as_set(s)
    delta = tpr_threshold(s.in_scores, tpr_target)
    return float(np.count_nonzero(s.out_scores >= delta) / s.k)


def dtacc(s):
    """Best balanced detection accuracy over all thresholds, equal priors."""
    s = _as_set(s)
    ins = np.sort(s.in_scores)
    outs = np.sort(s.out_scores)
    cand = np.unique(np.concatenate([ins, outs]))
    n_in_kept = s.m - np.searchsorted(ins, cand, side="left")
    n_out_rejected = np.searchsorted(outs, cand, side="left")
    acc = 0.5 * (n_in_kept / s.m + n_out_rejected / s.k)
    # The +/- infinity thresholds both give exactly 0.5.
    return float(max(0.5, acc.max()))


def detection_metrics(s):
    s = _as_set(s)
    return {
        "auroc": auroc(s),
        "dtacc": dtacc(s),
        "tnr_at_tpr95": tnr_at_tpr(s, 0.95),
        "fpr_at_tpr90": fpr_at_tpr(s, 0.90),
        "m": s.m,
        "k": s.k,
    }
