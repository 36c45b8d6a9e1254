"""Synthetic single-change-point benchmark patterns.

Five basic patterns (STP, CP, TP, SYP, SP) plus the natural pattern NP,
and the ten pairwise composites of the basic ones. The noise path
``r(t) ~ N(0, 1)`` depends only on the seed, so two specs with the same
seed share it whatever their kind or change location.

Per-kind parameters left as ``None`` default to their multiple of
``sigma``: STP 0.3/0.7, CP amplitudes 2/4 with periods 8/16, TP slopes
0.1/0.5, SYP departures 1/5, SP shift 1.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace

import numpy as np

from .dataset import TimeSeriesDataset
from .detect import ChangePointSet
from .errors import InvalidInputError
from .numerics import RngStream

__all__ = ["BASIC", "PATTERNS", "PatternSpec", "generate", "generate_composite", "parse_pattern"]

BASIC = ("STP", "CP", "TP", "SYP", "SP")
KINDS = ("NP",) + BASIC
COMPOSITES = tuple(itertools.combinations(BASIC, 2))
PATTERNS = BASIC + tuple(f"{a}-{b}" for a, b in COMPOSITES)


@dataclass(frozen=True)
class PatternSpec:
    kind: str | tuple = "NP"
    mu: float = 0.0
    sigma: float = 1.0
    stp_sigma1: float | None = None
    stp_sigma2: float | None = None
    cp_alpha1: float | None = None
    cp_period1: float = 8.0
    cp_alpha2: float | None = None
    cp_period2: float = 16.0
    tp_slope1: float | None = None
    tp_slope2: float | None = None
    syp_d1: float | None = None
    syp_d2: float | None = None
    sp_eta: float | None = None
    n: int = 100
    cp: int = 50
    seed: int = 0
    continuous_trend: bool = False

    def resolved(self, name: str) -> float:
        factors = {
            "stp_sigma1": 0.3, "stp_sigma2": 0.7, "cp_alpha1": 2.0, "cp_alpha2": 4.0,
            "tp_slope1": 0.1, "tp_slope2": 0.5, "syp_d1": 1.0, "syp_d2": 5.0, "sp_eta": 1.0,
        }
        v = getattr(self, name)
        return factors[name] * self.sigma if v is None else float(v)

    @property
    def kinds(self) -> tuple:
        return parse_pattern(self.kind)


def parse_pattern(kind) -> tuple:
    """``"TP-SP"`` / ``("TP", "SP")`` / ``"sp"`` -> tuple of upper-case kinds."""
    if isinstance(kind, str):
        parts = tuple(p.strip().upper() for p in kind.replace("+", "-").split("-") if p.strip())
    else:
        parts = tuple(str(p).upper() for p in kind)
    if not parts or any(p not in KINDS for p in parts):
        raise InvalidInputError(f"unknown pattern {kind!r}; expected one of {KINDS} or a pair")
    if len(parts) > 2:
        raise InvalidInputError("composites combine exactly two patterns")
    if len(parts) == 2 and (parts[0] == parts[1] or "NP" in parts):
        raise InvalidInputError("a composite needs two distinct non-NP patterns")
    return parts


def _validate(spec: PatternSpec):
    if spec.n < 2:
        raise InvalidInputError("n must be >= 2")
    if not 0 < spec.cp < spec.n:
        raise InvalidInputError(f"change point must satisfy 0 < cp < n, got {spec.cp}")
    if spec.sigma < 0:
        raise InvalidInputError("sigma must be >= 0")
    if spec.cp_period1 <= 0 or spec.cp_period2 <= 0:
        raise InvalidInputError("cycle periods must be positive")
    for name in ("stp_sigma1", "stp_sigma2"):
        if spec.resolved(name) < 0:
            raise InvalidInputError(f"{name} must be >= 0")


def _deviation(kind: str, spec: PatternSpec, t: np.ndarray, after: np.ndarray) -> np.ndarray:
    """Deterministic departure of ``kind`` from the natural pattern."""
    if kind in ("NP", "STP"):
        return np.zeros(t.size)
    if kind == "CP":
        pre = spec.resolved("cp_alpha1") * np.sin(2 * np.pi * t / spec.cp_period1)
        post = spec.resolved("cp_alpha2") * np.sin(2 * np.pi * t / spec.cp_period2)
    elif kind == "TP":
        s1, s2 = spec.resolved("tp_slope1"), spec.resolved("tp_slope2")
        pre = t * s1
        post = s1 * spec.cp + s2 * (t - spec.cp) if spec.continuous_trend else t * s2
    elif kind == "SYP":
        sign = np.where(t.astype(int) % 2 == 0, 1.0, -1.0)
        pre = spec.resolved("syp_d1") * sign
        post = -spec.resolved("syp_d2") * sign
    elif kind == "SP":
        pre = np.zeros(t.size)
        post = np.full(t.size, spec.resolved("sp_eta"))
    else:  # pragma: no cover - parse_pattern guards this
        raise InvalidInputError(kind)
    return np.where(after, post, pre)


def _noise_scale(kinds, spec: PatternSpec, after: np.ndarray) -> np.ndarray:
    if "STP" in kinds:
        return np.where(after, spec.resolved("stp_sigma2"), spec.resolved("stp_sigma1"))
    return np.full(after.size, spec.sigma)


def generate(spec: PatternSpec):
    """Series ``s(t), t = 0..n-1`` and its true change point set ``{cp}``."""
    _validate(spec)
    kinds = spec.kinds
    t = np.arange(spec.n, dtype=float)
    after = t >= spec.cp
    r = RngStream(spec.seed).normal(spec.n)
    s = spec.mu + _noise_scale(kinds, spec, after) * r
    for kind in kinds:
        s = s + _deviation(kind, spec, t, after)
    truth = ChangePointSet(np.array([float(spec.cp)]), np.array([np.inf]), np.nan, 1.0)
    label = "-".join(kinds)
    return TimeSeriesDataset(t, s, columns=[label]), truth


def generate_composite(kind_a: str, kind_b: str, spec: PatternSpec | None = None):
    """Two patterns on one shared noise stream.

    Deterministic deviations add up; STP acts through the noise scale
    instead.
    """
    spec = spec or PatternSpec()
    return generate(replace(spec, kind=(kind_a, kind_b)))
