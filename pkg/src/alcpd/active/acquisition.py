"""Acquisition values and greedy batch selection."""

from __future__ import annotations

import enum

import numpy as np

from ..errors import ExhaustedCandidatesError, InvalidInputError
from ..spectral import SpectralProfile

__all__ = ["Normalization", "minmax", "acquisition_values", "select_batch"]


class Normalization(str, enum.Enum):
    MINMAX = "minmax"
    NONE = "none"


def minmax(values) -> np.ndarray:
    """Rescale to [0, 1]; a constant vector maps to zeros."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return v.copy()
    lo, hi = float(v.min()), float(v.max())
    if not hi > lo:
        return np.zeros_like(v)
    return (v - lo) / (hi - lo)


def acquisition_values(profile: SpectralProfile, beta: float,
                       normalization=Normalization.MINMAX) -> np.ndarray:
    """``beta * SCDM + (1 - beta) * SU`` over the profile's candidates.

    With MinMax normalization both terms are first rescaled to [0, 1]
    independently over the candidate set.
    """
    if not 0.0 <= beta <= 1.0:
        raise InvalidInputError(f"beta must lie in [0, 1], got {beta}")
    scdm, su = profile.scdm, profile.su
    if Normalization(normalization) is Normalization.MINMAX:
        scdm, su = minmax(scdm), minmax(su)
    return beta * scdm + (1.0 - beta) * su


def select_batch(af, candidates, batch_size: int, min_spacing: float = 0.0) -> np.ndarray:
    """Greedy batch: take the best candidate, mask its neighbourhood, repeat.

    Candidates strictly closer than ``min_spacing`` to a chosen point are
    masked. Ties go to the smallest location. Returns at most
    ``batch_size`` locations in selection order.
    """
    if batch_size < 1:
        raise InvalidInputError("batch_size must be >= 1")
    af = np.asarray(af, dtype=float).reshape(-1)
    cand = np.asarray(candidates, dtype=float).reshape(-1)
    if af.shape != cand.shape:
        raise InvalidInputError("af and candidates must have equal lengths")
    if cand.size == 0:
        raise ExhaustedCandidatesError("no candidate locations left to select from")
    order = np.argsort(cand, kind="stable")
    cand, af = cand[order], af[order]
    live = np.ones(cand.size, dtype=bool)
    chosen = []
    while live.any() and len(chosen) < batch_size:
        i = int(np.argmax(np.where(live, af, -np.inf)))
        chosen.append(cand[i])
        live[i] = False
        if min_spacing > 0:
            live &= ~(np.abs(cand - cand[i]) < min_spacing)
    return np.array(chosen)
