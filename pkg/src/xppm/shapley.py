"""Shapley values over the flattened prefix features.

The game is interventional: the payout of a coalition ``S`` is the mean
prediction over a background sample of prefixes in which the features of
``S`` are replaced by the instance's values.  Features that are not
*active* (padding rows of the instance, and features constant over the
background and equal to the instance value) are pinned to the instance
value in every composite and get a Shapley value of exactly zero.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import gammaln

from .encoding import EncodedPrefix, FeatureSchema
from .errors import ShapleyError

EXACT = "exact"
PERMUTATION = "permutation"

DEFAULT_EXACT_CAP = 20
DEFAULT_SAMPLES = 2000
DEFAULT_BACKGROUND = 100


class ValueFunction:
    """Coalition payouts for one instance against a background sample.

    ``predict`` takes ``(X, lengths)`` with ``X`` of shape ``(N, M, n)`` and
    returns ``N`` outputs.  When ``affine`` is true the predictor is known to
    be affine in the flattened input, so the background collapses to its
    mean row without changing any payout.
    """

    def __init__(
        self,
        predict: Callable,
        background,
        instance: EncodedPrefix,
        affine: bool = False,
        batch_rows: int = 2048,
    ):
        bg = np.asarray(background, dtype=float)
        if bg.ndim == 2:
            if bg.shape[1] != instance.matrix.size:
                raise ShapleyError(f"background width {bg.shape[1]} != instance size {instance.matrix.size}")
            bg = bg.reshape(bg.shape[0], *instance.matrix.shape)
        if bg.shape[0] == 0:
            raise ShapleyError("empty background set")
        if bg.shape[1:] != instance.matrix.shape:
            raise ShapleyError(f"background shape {bg.shape[1:]} != instance shape {instance.matrix.shape}")
        self.predict = predict
        self.instance = instance
        self.affine = affine
        self.batch_rows = batch_rows
        self.shape = instance.matrix.shape
        self.x = instance.matrix.reshape(-1).astype(float)
        frame = bg.reshape(bg.shape[0], -1).copy()
        # instance padding rows are never players: they always hold the instance value
        pad = instance.first_real_row * self.shape[1]
        frame[:, :pad] = self.x[:pad]
        self.frame = frame
        self._frames: dict = {}

    @property
    def size(self) -> int:
        return self.frame.shape[0]

    @property
    def real_indices(self) -> np.ndarray:
        """Flat indices of the instance's non-padding rows."""
        return np.arange(self.instance.first_real_row * self.shape[1], self.x.size)

    def _frame_for(self, active: np.ndarray) -> np.ndarray:
        key = active.tobytes()
        fr = self._frames.get(key)
        if fr is None:
            fr = self.frame.copy()
            inactive = np.ones(self.x.size, dtype=bool)
            inactive[active] = False
            fr[:, inactive] = self.x[inactive]
            if self.affine:
                mean = fr.mean(axis=0, keepdims=True)
                mean[:, inactive] = self.x[inactive]
                fr = mean
            self._frames = {key: fr}
            fr.setflags(write=False)
        return fr

    def _predict_rows(self, rows: np.ndarray) -> np.ndarray:
        X = rows.reshape(rows.shape[0], *self.shape)
        lengths = np.full(rows.shape[0], self.instance.length)
        return np.asarray(self.predict(X, lengths), dtype=float)

    def values(self, active: Sequence[int], masks: np.ndarray) -> np.ndarray:
        """Payouts of the coalitions ``masks`` (boolean, one column per entry
        of ``active``); non-active features hold the instance value."""
        active = np.asarray(active, dtype=int)
        masks = np.asarray(masks, dtype=bool).reshape(-1, len(active))
        fr = self._frame_for(active)
        B, D = fr.shape
        out = np.empty(len(masks))
        step = max(1, self.batch_rows // B)
        for s in range(0, len(masks), step):
            mk = masks[s:s + step]
            full = np.zeros((len(mk), D), dtype=bool)
            full[:, active] = mk
            comp = np.where(full[:, None, :], self.x, fr[None, :, :])
            pred = self._predict_rows(comp.reshape(-1, D))
            out[s:s + step] = pred.reshape(len(mk), B).mean(axis=1)
        return out

    def value_of(self, S: Sequence[int]) -> float:
        """Payout of coalition ``S`` (flat feature indices): features in ``S``
        come from the instance, all others from the background prefixes."""
        S = np.asarray(sorted(S), dtype=int)
        comp = self.frame.copy()
        comp[:, S] = self.x[S]
        return float(self._predict_rows(comp).mean())

    def base_value(self) -> float:
        return self.value_of(())

    def prediction(self) -> float:
        return float(self._predict_rows(self.x[None])[0])


def value_function(predictor, background, instance: EncodedPrefix, collapse_affine: bool = True) -> ValueFunction:
    """Value function for a fitted :class:`~xppm.predictor.Predictor`."""
    return ValueFunction(
        predictor.predict_arrays,
        background,
        instance,
        affine=collapse_affine and bool(getattr(predictor, "is_affine", False)),
    )


def active_indices(vf: ValueFunction, freeze_constant: bool = True) -> np.ndarray:
    """Players of the game: features of real rows, minus (optionally) those
    whose background column is constant and equal to the instance value."""
    idx = vf.real_indices
    if not freeze_constant:
        return idx
    col = vf.frame[:, idx]
    frozen = np.all(col == vf.x[idx][None, :], axis=0)
    return idx[~frozen]


@dataclass(eq=False)
class ShapleyAttribution:
    """Shapley values aligned with the flattened prefix ``χ`` (length ``M*n``)."""

    values: np.ndarray
    base_value: float
    prediction: float
    estimator: str
    active: np.ndarray
    instance: EncodedPrefix
    samples: Optional[int] = None
    seed: Optional[int] = None
    stderr: Optional[np.ndarray] = None

    @property
    def matrix(self) -> np.ndarray:
        return self.values.reshape(self.instance.matrix.shape)

    @property
    def active_values(self) -> np.ndarray:
        return self.values[self.active]

    @property
    def total(self) -> float:
        return float(self.values.sum())


def _coalition_weights(p: int) -> np.ndarray:
    """|S|!(p-|S|-1)!/p! for |S| = 0..p-1, via log-gamma."""
    s = np.arange(p)
    return np.exp(gammaln(s + 1) + gammaln(p - s) - gammaln(p + 1))


def exact_shapley(vf: ValueFunction, active: Optional[Sequence[int]] = None, cap: int = DEFAULT_EXACT_CAP) -> ShapleyAttribution:
    """Shapley values by enumerating all ``2**p`` coalitions of the active features."""
    active = active_indices(vf) if active is None else np.asarray(active, dtype=int)
    p = len(active)
    if p > cap:
        raise ShapleyError(f"{p} active features exceed the exact cap of {cap}; use sampled_shapley")
    psi = np.zeros(vf.x.size)
    codes = np.arange(2**p, dtype=np.int64)
    masks = ((codes[:, None] >> np.arange(p)) & 1).astype(bool)
    v = vf.values(active, masks)
    if p:
        weights = _coalition_weights(p)
        size = masks.sum(axis=1)
        for k in range(p):
            bit = np.int64(1) << k
            without = codes[(codes & bit) == 0]
            psi[active[k]] = np.sum(weights[size[without]] * (v[without | bit] - v[without]))
    return ShapleyAttribution(psi, float(v[0]), float(v[-1]), EXACT, active, vf.instance)


def permutation_shapley(vf: ValueFunction, active: Sequence[int], permutations: np.ndarray) -> tuple:
    """Mean marginal contributions over the given orderings of ``active``.

    ``permutations`` has one row per ordering, holding positions into
    ``active``.  Returns ``(psi_active, stderr_active, base, prediction)``.
    """
    active = np.asarray(active, dtype=int)
    perms = np.asarray(permutations, dtype=int).reshape(-1, len(active))
    S, p = perms.shape
    if S < 1:
        raise ShapleyError("need at least one permutation")
    if p == 0:
        v = vf.values(active, np.zeros((1, 0), dtype=bool))
        return np.zeros(0), np.zeros(0), float(v[0]), float(v[0])
    rank = np.empty_like(perms)
    np.put_along_axis(rank, perms, np.arange(p)[None, :], axis=1)
    # chain k of permutation s holds the first k players of that ordering
    chains = rank[:, None, :] < np.arange(p + 1)[None, :, None]
    flat = chains.reshape(-1, p)
    if 2**p < len(flat):
        # small games: evaluate each distinct coalition once
        packed = np.packbits(flat, axis=1)
        _, first, inverse = np.unique(packed, axis=0, return_index=True, return_inverse=True)
        v = vf.values(active, flat[first])[inverse.reshape(-1)]
    else:
        v = vf.values(active, flat)
    v = v.reshape(S, p + 1)
    marg = np.empty((S, p))
    np.put_along_axis(marg, perms, np.diff(v, axis=1), axis=1)
    psi = marg.mean(axis=0)
    se = marg.std(axis=0, ddof=1) / math.sqrt(S) if S > 1 else np.zeros(p)
    return psi, se, float(v[0, 0]), float(v[0, -1])


def sampled_shapley(
    vf: ValueFunction,
    active: Optional[Sequence[int]] = None,
    samples: int = DEFAULT_SAMPLES,
    seed: int = 0,
) -> ShapleyAttribution:
    """Permutation-sampling estimate with per-feature standard errors."""
    if samples < 1:
        raise ShapleyError("samples must be >= 1")
    active = active_indices(vf) if active is None else np.asarray(active, dtype=int)
    p = len(active)
    rng = np.random.default_rng(seed)
    perms = rng.permuted(np.tile(np.arange(p), (samples, 1)), axis=1)
    psi_a, se_a, base, pred = permutation_shapley(vf, active, perms)
    psi = np.zeros(vf.x.size)
    se = np.zeros(vf.x.size)
    psi[active] = psi_a
    se[active] = se_a
    return ShapleyAttribution(psi, base, pred, PERMUTATION, active, vf.instance, samples, seed, se)


def affine_shapley(vf: ValueFunction, active: Optional[Sequence[int]] = None) -> ShapleyAttribution:
    """Exact values for an affine predictor.

    The marginal contribution of a feature does not depend on the coalition,
    so ``psi_i = v({i}) - v({})`` and ``p + 1`` payouts suffice.
    """
    if not vf.affine:
        raise ShapleyError("affine_shapley needs a value function of an affine predictor")
    active = active_indices(vf) if active is None else np.asarray(active, dtype=int)
    p = len(active)
    masks = np.vstack([np.zeros((1, p), dtype=bool), np.eye(p, dtype=bool)])
    v = vf.values(active, masks)
    psi = np.zeros(vf.x.size)
    psi[active] = v[1:] - v[0]
    return ShapleyAttribution(psi, float(v[0]), vf.prediction(), EXACT, active, vf.instance)


AUTO = "auto"
SAMPLED = "sampled"
ESTIMATORS = (AUTO, EXACT, SAMPLED)


def shapley_values(
    vf: ValueFunction,
    active: Optional[Sequence[int]] = None,
    exact_cap: int = DEFAULT_EXACT_CAP,
    samples: int = DEFAULT_SAMPLES,
    seed: int = 0,
    estimator: str = AUTO,
) -> ShapleyAttribution:
    """Exact when the predictor is affine or there are at most ``exact_cap``
    active features, sampled otherwise.  ``estimator`` forces one method."""
    if estimator not in ESTIMATORS:
        raise ShapleyError(f"unknown estimator {estimator!r}")
    active = active_indices(vf) if active is None else np.asarray(active, dtype=int)
    if estimator == SAMPLED:
        return sampled_shapley(vf, active, samples, seed)
    if vf.affine:
        return affine_shapley(vf, active)
    if estimator == EXACT or len(active) <= exact_cap:
        return exact_shapley(vf, active, cap=len(active) if estimator == EXACT else exact_cap)
    return sampled_shapley(vf, active, samples, seed)


def sample_background(n_items: int, size: int = DEFAULT_BACKGROUND, seed: int = 0) -> np.ndarray:
    """Sorted indices of ``size`` items drawn uniformly without replacement."""
    if n_items == 0:
        raise ShapleyError("cannot draw a background from an empty training split")
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n_items, size=min(size, n_items), replace=False))


def attribution_rows(attr: ShapleyAttribution, schema: FeatureSchema) -> list:
    """``(index, attribute, value, timestep_offset, psi)`` per active feature."""
    n = schema.width
    M = attr.instance.max_len
    rows = []
    for idx in attr.active:
        r, j = divmod(int(idx), n)
        f = schema.features[j]
        rows.append((int(idx), f.attribute, f.value if f.value is not None else "", r - (M - 1), float(attr.values[idx])))
    return rows


def write_attributions(path, attributions: Sequence[tuple], schema: FeatureSchema) -> None:
    """``attributions`` is a sequence of ``(case_id, ShapleyAttribution)``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["case_id", "index", "attribute", "value", "timestep_offset", "psi"])
        for case_id, attr in attributions:
            for row in attribution_rows(attr, schema):
                w.writerow([case_id, row[0], row[1], row[2], row[3], repr(row[4])])
