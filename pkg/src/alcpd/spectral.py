"""Sliding-window magnitude spectra and spectral change metrics.

All metrics operate on magnitude spectra (non-redundant DFT bins of a
real signal). Profiles are indexed by integer grid positions.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DegenerateInputError, InvalidInputError
from .numerics import dft_magnitude

__all__ = [
    "WindowKind",
    "Spectrogram",
    "SpectralProfile",
    "window_function",
    "stft",
    "smc",
    "scm",
    "sgd",
    "diss",
    "scdm",
    "scdm_profile",
    "spectral_uncertainty",
    "profile_valid",
]


class WindowKind(str, enum.Enum):
    HANN = "hann"
    RECTANGULAR = "rectangular"

    @classmethod
    def parse(cls, value) -> "WindowKind":
        if isinstance(value, cls):
            return value
        v = str(value).lower()
        if v in ("hann", "hanning"):
            return cls.HANN
        if v in ("rect", "rectangular", "boxcar", "none"):
            return cls.RECTANGULAR
        raise InvalidInputError(f"unknown window kind {value!r}")


def window_function(kind, A: int) -> np.ndarray:
    """Periodic Hann (the DFT-even variant) or an all-ones window."""
    kind = WindowKind.parse(kind)
    if kind is WindowKind.RECTANGULAR:
        return np.ones(A)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(A) / A)


@dataclass
class Spectrogram:
    frame_centers: np.ndarray
    frames: np.ndarray
    window_size: int
    hop: int
    window_kind: WindowKind


@dataclass
class SpectralProfile:
    """SCDM and spectral uncertainty at each candidate location."""

    candidates: np.ndarray
    scdm: np.ndarray
    su: np.ndarray

    def __post_init__(self):
        self.candidates = np.asarray(self.candidates, dtype=float)
        self.scdm = np.asarray(self.scdm, dtype=float)
        self.su = np.asarray(self.su, dtype=float)
        if not (self.candidates.shape == self.scdm.shape == self.su.shape):
            raise InvalidInputError("profile arrays must have equal lengths")

    def to_csv(self, path):
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["location", "scdm", "su"])
            for row in zip(self.candidates, self.scdm, self.su):
                w.writerow([repr(float(v)) for v in row])


def _frames(signal, A: int, hop: int, window_kind) -> np.ndarray:
    """Magnitude spectra of all windows ``signal[..., tau:tau+A]``, tau = 0, hop, ..."""
    windows = sliding_window_view(signal, A, axis=-1)[..., ::hop, :]
    return dft_magnitude(windows * window_function(window_kind, A))


def stft(signal, A: int, hop: int = 1, window_kind=WindowKind.HANN) -> Spectrogram:
    """Short-time magnitude spectra of a uniformly sampled real signal.

    The frame at offset ``tau`` is ``|DFT(w * signal[tau:tau+A])|`` and is
    reported at center ``tau + A/2`` (grid units).
    """
    signal = np.asarray(signal, dtype=float).reshape(-1)
    if A < 2 or hop < 1:
        raise InvalidInputError(f"need A >= 2 and hop >= 1, got A={A}, hop={hop}")
    if signal.size < A:
        raise InvalidInputError(f"signal of length {signal.size} is shorter than the window ({A})")
    frames = _frames(signal, A, hop, window_kind)
    centers = np.arange(frames.shape[0]) * hop + A / 2.0
    return Spectrogram(centers, frames, A, hop, WindowKind.parse(window_kind))


def _pair(xa, xb, min_len=1):
    xa = np.asarray(xa, dtype=float).reshape(-1)
    xb = np.asarray(xb, dtype=float).reshape(-1)
    if xa.size != xb.size:
        raise InvalidInputError(f"spectra differ in length ({xa.size} vs {xb.size})")
    if xa.size < min_len:
        raise InvalidInputError(f"spectra need at least {min_len} bins")
    return xa, xb


def smc(mean_a, mean_b) -> float:
    """Spectral mean change: Euclidean distance between mean spectra."""
    a, b = _pair(mean_a, mean_b)
    return float(np.sqrt(np.sum((a - b) ** 2)))


def _pearson(a, b):
    da = a - a.mean()
    db = b - b.mean()
    na = float(np.sqrt(da @ da))
    nb = float(np.sqrt(db @ db))
    scale_a = max(np.max(np.abs(a)), 1.0)
    scale_b = max(np.max(np.abs(b)), 1.0)
    deg_a = na <= 1e-12 * scale_a
    deg_b = nb <= 1e-12 * scale_b
    if deg_a or deg_b:
        return None, deg_a, deg_b
    r = float(da @ db) / (na * nb)
    return min(1.0, max(-1.0, r)), False, False


def scm(xa, xb) -> float:
    """Spectral correlation mapper: Pearson correlation across bins."""
    a, b = _pair(xa, xb, 2)
    r, deg_a, deg_b = _pearson(a, b)
    if r is None:
        raise DegenerateInputError("SCM is undefined for a constant spectrum")
    return r


def _scm_or_fallback(a, b) -> float:
    r, deg_a, deg_b = _pearson(a, b)
    if r is not None:
        return r
    # both flat: no shape change; exactly one flat: uncorrelated
    return 1.0 if (deg_a and deg_b) else 0.0


def sgd(xa, xb) -> float:
    """Spectral gradient distance between first differences across bins."""
    a, b = _pair(xa, xb, 2)
    return float(np.sqrt(np.sum((np.diff(a) - np.diff(b)) ** 2)))


def diss(xa, xb) -> float:
    """SGD weighted by ``(1 - SCM) / 2``."""
    a, b = _pair(xa, xb, 2)
    return sgd(a, b) * (1.0 - _scm_or_fallback(a, b)) / 2.0


def scdm(seg_a, seg_b) -> float:
    """Spectral change detection metric between two segments of frames.

    Each segment is a ``(frames, bins)`` array (a single spectrum is
    accepted too); the metric compares the per-bin mean spectra:
    ``SMC + SGD * (1 - SCM) / 2``. A constant mean spectrum never raises;
    see :func:`_scm_or_fallback`.
    """
    a = np.atleast_2d(np.asarray(seg_a, dtype=float))
    b = np.atleast_2d(np.asarray(seg_b, dtype=float))
    if a.shape[0] < 1 or b.shape[0] < 1:
        raise InvalidInputError("each segment needs at least one frame")
    ma, mb = _pair(a.mean(0), b.mean(0), 2)
    return smc(ma, mb) + sgd(ma, mb) * (1.0 - _scm_or_fallback(ma, mb)) / 2.0


def _scdm_rows(ma, mb) -> np.ndarray:
    """Vectorized SCDM for stacked mean spectra of shape ``(n, bins)``."""
    d = ma - mb
    smc_v = np.sqrt(np.sum(d**2, axis=1))
    sgd_v = np.sqrt(np.sum(np.diff(d, axis=1) ** 2, axis=1))
    r = np.array([_scm_or_fallback(a, b) for a, b in zip(ma, mb)])
    return smc_v + sgd_v * (1.0 - r) / 2.0


def profile_valid(n: int, candidates, before: int, after: int) -> np.ndarray:
    """Mask of candidates with ``before`` points to the left and ``after`` to the right."""
    c = np.asarray(candidates, dtype=int)
    return (c - before >= 0) & (c + after <= n)


def scdm_profile(mean_path, candidates, A: int, window_kind=WindowKind.HANN,
                 segment_length: int | None = None) -> np.ndarray:
    """SCDM at each candidate grid index.

    The left segment is ``[x - seg, x)`` and the right one ``[x, x + seg)``
    with ``seg = segment_length`` (default ``A``); each segment's frames are
    all length-``A`` windows inside it at hop 1. Candidates without room on
    both sides get 0 (see :func:`profile_valid`).
    """
    x = np.asarray(mean_path, dtype=float).reshape(-1)
    cand = np.asarray(candidates, dtype=int).reshape(-1)
    seg = A if segment_length is None else int(segment_length)
    if seg < A:
        raise InvalidInputError("segment_length must be >= A")
    out = np.zeros(cand.size)
    valid = profile_valid(x.size, cand, seg, seg)
    if x.size < A or not valid.any():
        return out
    frames = _frames(x, A, 1, window_kind)  # frame j covers [j, j+A)
    nper = seg - A + 1
    csum = np.vstack([np.zeros(frames.shape[1]), np.cumsum(frames, axis=0)])
    c = cand[valid]
    left_start = c - seg
    right_start = c
    ma = (csum[left_start + nper] - csum[left_start]) / nper
    mb = (csum[right_start + nper] - csum[right_start]) / nper
    out[valid] = np.maximum(_scdm_rows(ma, mb), 0.0)
    return out


def spectral_uncertainty(paths, candidates, A: int, window_kind=WindowKind.HANN) -> np.ndarray:
    """Mean over frequency of the across-path variance of window spectra.

    For candidate ``x`` each path's spectrum is taken over the centered
    window ``[x - A//2, x - A//2 + A)``; the per-bin population variance over
    the ``S`` paths is averaged over bins. Candidates whose window does not
    fit get 0.
    """
    P = np.asarray(paths, dtype=float)
    if P.ndim != 2 or P.shape[0] < 2:
        raise InvalidInputError("spectral_uncertainty needs at least 2 sample paths")
    cand = np.asarray(candidates, dtype=int).reshape(-1)
    n = P.shape[1]
    out = np.zeros(cand.size)
    start = cand - A // 2
    valid = (start >= 0) & (start + A <= n)
    if n < A or not valid.any():
        return out
    spectra = _frames(P, A, 1, window_kind)  # (S, n-A+1, bins)
    su = spectra.var(axis=0).mean(axis=-1)
    out[valid] = su[start[valid]]
    return out
