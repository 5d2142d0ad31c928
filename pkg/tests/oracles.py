"""Brute-force reference implementations used as test oracles.

These are deliberately naive: direct formulas, no vectorisation, no
shortcuts shared with the library code.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def shapley_bruteforce(f, x, background, players):
    """Shapley values by the subset formula.

    ``f`` maps one flat vector to a float.  Features outside ``players`` are
    fixed at the instance value; the payout of ``S`` averages ``f`` over
    background rows with the features of ``S`` taken from ``x``.
    """
    x = np.asarray(x, dtype=float)
    bg = np.asarray(background, dtype=float)
    players = list(players)
    p = len(players)

    def val(S):
        total = 0.0
        for b in bg:
            z = b.copy()
            for j in range(len(x)):
                if j not in players or j in S:
                    z[j] = x[j]
            total += f(z)
        return total / len(bg)

    psi = np.zeros(len(x))
    cache = {}
    for i in players:
        others = [j for j in players if j != i]
        acc = 0.0
        for r in range(p):
            w = math.factorial(r) * math.factorial(p - r - 1) / math.factorial(p)
            for S in itertools.combinations(others, r):
                S = frozenset(S)
                if S not in cache:
                    cache[S] = val(S)
                Si = S | {i}
                if Si not in cache:
                    cache[Si] = val(Si)
                acc += w * (cache[Si] - cache[S])
        psi[i] = acc
    return psi, val(frozenset()), val(frozenset(players))


def auroc_pairs(y, scores):
    """Probability that a random positive outranks a random negative (ties 1/2)."""
    pos = [s for s, t in zip(scores, y) if t]
    neg = [s for s, t in zip(scores, y) if not t]
    if not pos or not neg:
        return None
    wins = 0.0
    for a in pos:
        for b in neg:
            wins += 1.0 if a > b else 0.5 if a == b else 0.0
    return wins / (len(pos) * len(neg))


def average_precision_steps(y, scores):
    """Area under the interpolated precision-recall curve, one threshold per
    distinct score, summed as right-continuous steps."""
    y = [bool(t) for t in y]
    P = sum(y)
    if P == 0 or P == len(y):
        return None
    thresholds = sorted(set(scores), reverse=True)
    points = []
    for th in thresholds:
        tp = sum(1 for s, t in zip(scores, y) if s >= th and t)
        fp = sum(1 for s, t in zip(scores, y) if s >= th and not t)
        points.append((tp / P, tp / (tp + fp)))
    ap = 0.0
    prev_r = 0.0
    for k, (r, _) in enumerate(points):
        best = max(pr for rr, pr in points[k:])
        ap += (r - prev_r) * best
        prev_r = r
    return ap


def occurs_later(activities, target, i):
    """activity_occurrence by scanning the suffix after position i (1-based)."""
    n = len(activities)
    if i >= n:
        return False
    for a in activities[i:]:
        if a == target:
            return True
    return False


def filter_by_hand(values, delta):
    """Entries strictly outside [mu - delta*xi, mu + delta*xi]."""
    n = len(values)
    mu = sum(values) / n
    xi = math.sqrt(sum((v - mu) ** 2 for v in values) / n)
    lo, hi = mu - delta * xi, mu + delta * xi
    return [k for k, v in enumerate(values) if v < lo or v > hi], (lo, hi)
