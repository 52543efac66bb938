"""Slow, obviously-correct reference implementations used only by the tests.

None of these call into the code paths they are used to check.
"""

import math

import numpy as np


def matmul_loops(a, b):
    m, k = len(a), len(a[0])
    n = len(b[0])
    out = [[0.0] * n for _ in range(m)]
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += a[i][t] * b[t][j]
            out[i][j] = acc
    return np.array(out)


def distance_loops(f, p, eps):
    out = np.zeros((len(f), len(p)))
    for i in range(len(f)):
        for j in range(len(p)):
            s = 0.0
            for a, b in zip(f[i], p[j]):
                s += (a - b) ** 2
            out[i, j] = max(math.sqrt(s), eps)
    return out


def auroc_pairs(ins, outs):
    wins = 0.0
    for a in ins:
        for b in outs:
            if a > b:
                wins += 1.0
            elif a == b:
                wins += 0.5
    return wins / (len(ins) * len(outs))


def sweep_tpr_threshold(ins, tpr_target):
    """Largest observed in-score whose >= set still covers tpr_target of ins."""
    best = None
    for d in sorted(set(ins)):
        if sum(1 for v in ins if v >= d) / len(ins) >= tpr_target:
            best = d
    return best


def tnr_sweep(ins, outs, tpr_target):
    d = sweep_tpr_threshold(ins, tpr_target)
    return sum(1 for v in outs if v < d) / len(outs)


def fpr_sweep(ins, outs, tpr_target):
    d = sweep_tpr_threshold(ins, tpr_target)
    return sum(1 for v in outs if v >= d) / len(outs)


def dtacc_sweep(ins, outs):
    best = 0.0
    for d in [-math.inf, *sorted(set(ins) | set(outs)), math.inf]:
        tpr = sum(1 for v in ins if v >= d)
        tnr = sum(1 for v in outs if v < d)
        best = max(best, 0.5 * (tpr / len(ins) + tnr / len(outs)))
    return best


def central_difference(fn, arr, h=1e-5):
    """Numerical gradient of scalar ``fn()`` w.r.t. ``arr``, perturbed in place."""
    grad = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        old = arr[idx]
        arr[idx] = old + h
        up = fn()
        arr[idx] = old - h
        down = fn()
        arr[idx] = old
        grad[idx] = (up - down) / (2 * h)
    return grad


def relative_error(analytic, numeric, floor=1e-6):
    """Elementwise |a - n| / max(|a| + |n|, floor), maximised.

    The floor sits above central-difference roundoff (about eps * |loss| / h,
    ~1e-11 at h = 1e-5), so near-zero entries are judged on absolute error.
    """
    a = np.asarray(analytic)
    n = np.asarray(numeric)
    return float(np.max(np.abs(a - n) / np.maximum(np.abs(a) + np.abs(n), floor)))
