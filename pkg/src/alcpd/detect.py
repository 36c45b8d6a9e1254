"""Threshold-and-suppress change point estimation and evaluation metrics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInputError

__all__ = [
    "ChangePointSet",
    "EvalResult",
    "detect_threshold",
    "detect_top_k",
    "percentile_threshold",
    "rmse",
    "f1",
    "evaluate",
]


@dataclass
class ChangePointSet:
    locations: np.ndarray
    scores: np.ndarray
    threshold: float
    delta: float
    short: bool = False  # top-k mode found fewer than k separable peaks

    def __len__(self):
        return len(self.locations)

    def to_csv(self, path):
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["location", "score"])
            for x, s in zip(self.locations, self.scores):
                w.writerow([repr(float(x)), repr(float(s))])

    def report(self) -> str:
        lines = [f"threshold b = {self.threshold!r}", f"suppression delta = {self.delta!r}",
                 f"detected {len(self)} change point(s)" + (" (fewer than requested)" if self.short else "")]
        lines += [f"  {float(x):g}\tscore {float(s):.6g}" for x, s in zip(self.locations, self.scores)]
        return "\n".join(lines)


@dataclass
class EvalResult:
    precision: float
    recall: float
    f1: float
    rmse: float | None = None
    matches: list = field(default_factory=list)

    def report(self) -> str:
        rm = "n/a" if self.rmse is None else f"{self.rmse:.6g}"
        return (f"precision {self.precision:.6g}\nrecall {self.recall:.6g}\n"
                f"F1 {self.f1:.6g}\nRMSE {rm}\n"
                + "".join(f"  truth {t:g} <-> pred {p:g}\n" for t, p in self.matches))


def _as_profile(locations, values):
    loc = np.asarray(locations, dtype=float).reshape(-1)
    val = np.asarray(values, dtype=float).reshape(-1)
    if loc.shape != val.shape:
        raise InvalidInputError("locations and values must have the same length")
    order = np.argsort(loc, kind="stable")
    return loc[order], val[order]


def _suppress_loop(loc, val, b, delta, k=None):
    """Algorithm 1: repeatedly take the argmax above ``b`` and suppress
    ``(x - delta, x + delta)``. Suppressed entries are removed from
    contention entirely, which coincides with zeroing whenever ``b >= 0``.
    """
    if not delta > 0:
        raise InvalidInputError("suppression interval delta must be positive")
    work = val.copy()
    live = np.ones(loc.size, dtype=bool)
    picked = []
    while live.any():
        cand = np.where(live, work, -np.inf)
        i = int(np.argmax(cand))  # first maximum, i.e. smallest location
        if not cand[i] > b:
            break
        picked.append(i)
        live &= ~(np.abs(loc - loc[i]) < delta)
        if k is not None and len(picked) == k:
            break
    picked.sort(key=lambda j: loc[j])
    return np.array([loc[j] for j in picked]), np.array([val[j] for j in picked])


def detect_threshold(locations, values, b: float, delta: float) -> ChangePointSet:
    """Change points whose profile value exceeds ``b``, greedily by value."""
    loc, val = _as_profile(locations, values)
    pts, scores = _suppress_loop(loc, val, b, delta)
    return ChangePointSet(pts, scores, float(b), float(delta))


def detect_top_k(locations, values, k: int, delta: float) -> ChangePointSet:
    """The ``k`` strongest mutually separated peaks (threshold ``-inf``)."""
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    loc, val = _as_profile(locations, values)
    pts, scores = _suppress_loop(loc, val, -np.inf, delta, k)
    return ChangePointSet(pts, scores, -math.inf, float(delta), short=len(pts) < k)


def percentile_threshold(values, percentile: float = 95.0) -> float:
    return float(np.percentile(np.asarray(values, dtype=float), percentile))


def rmse(pred, truth) -> float:
    """Root mean squared error between sorted predictions and sorted truth."""
    p = np.sort(np.asarray(pred, dtype=float).reshape(-1))
    t = np.sort(np.asarray(truth, dtype=float).reshape(-1))
    if p.size != t.size or t.size == 0:
        raise InvalidInputError(
            f"RMSE needs equally many predictions and true change points ({p.size} vs {t.size})"
        )
    return float(np.sqrt(np.mean((p - t) ** 2)))


def _match(truth, pred, margin):
    """Maximum matching of truth to predictions within ``margin``.

    Truth points are swept in ascending order and each takes the leftmost
    unused prediction inside its window. Because every window has the same
    width, this greedy sweep attains the maximum cardinality.
    """
    t = np.sort(np.asarray(truth, dtype=float).reshape(-1))
    p = np.sort(np.asarray(pred, dtype=float).reshape(-1))
    matches = []
    j = 0
    for x in t:
        while j < p.size and p[j] < x - margin:
            j += 1
        if j < p.size and p[j] <= x + margin:
            matches.append((float(x), float(p[j])))
            j += 1
    return matches


def f1(pred, truth, margin: float) -> EvalResult:
    """Precision, recall and F1 with each prediction matched at most once."""
    if margin < 0:
        raise InvalidInputError("margin must be >= 0")
    pred = np.asarray(pred, dtype=float).reshape(-1)
    truth = np.asarray(truth, dtype=float).reshape(-1)
    matches = _match(truth, pred, margin)
    tp = len(matches)
    precision = tp / pred.size if pred.size else 0.0
    recall = tp / truth.size if truth.size else 0.0
    f = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return EvalResult(precision, recall, f, None, matches)


def evaluate(pred, truth, margin: float) -> EvalResult:
    """F1 metrics plus RMSE whenever the counts agree."""
    res = f1(pred, truth, margin)
    if len(np.atleast_1d(pred)) == len(np.atleast_1d(truth)) and len(np.atleast_1d(truth)) > 0:
        res.rmse = rmse(pred, truth)
    return res
