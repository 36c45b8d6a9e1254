"""Small numerical kernel: covariance functions, jittered Cholesky, DFT
magnitudes, the standard normal and a seedable random stream.

Kernel and Cholesky routines accept either numpy arrays or float64 torch
tensors, so the same code backs both the public numpy API and the
autograd-based training path.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
import torch
from scipy.special import erf

from .errors import InvalidInputError, NumericalFailure

__all__ = [
    "KernelKind",
    "KernelSpec",
    "kernel_matrix",
    "cholesky_jitter",
    "dft_magnitude",
    "std_normal",
    "RngStream",
    "softplus",
    "inv_softplus",
]

_SQRT5 = math.sqrt(5.0)
_JITTER_LADDER = (0.0,) + tuple(10.0**k for k in range(7))


class KernelKind(str, enum.Enum):
    RBF = "rbf"
    MATERN52 = "matern52"

    @classmethod
    def parse(cls, value) -> "KernelKind":
        if isinstance(value, cls):
            return value
        v = str(value).lower().replace(" ", "").replace("-", "").replace("_", "")
        if v in ("rbf", "se", "sqexp"):
            return cls.RBF
        if v in ("matern", "matern52", "m52", "matern5/2"):
            return cls.MATERN52
        raise InvalidInputError(f"unknown kernel kind {value!r}")


@dataclass(frozen=True)
class KernelSpec:
    """Stationary kernel with signal variance and lengthscale."""

    kind: KernelKind = KernelKind.RBF
    variance: float = 1.0
    lengthscale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", KernelKind.parse(self.kind))
        if not (self.variance > 0 and math.isfinite(self.variance)):
            raise InvalidInputError(f"kernel variance must be positive, got {self.variance}")
        if not (self.lengthscale > 0 and math.isfinite(self.lengthscale)):
            raise InvalidInputError(f"kernel lengthscale must be positive, got {self.lengthscale}")


def _stationary(kind, variance, lengthscale, r):
    """Kernel value as a function of the distance ``r`` (numpy or torch)."""
    xp = torch if isinstance(r, torch.Tensor) else np
    if kind is KernelKind.RBF:
        return variance * xp.exp(-0.5 * (r / lengthscale) ** 2)
    s = _SQRT5 * r / lengthscale
    return variance * (1.0 + s + s**2 / 3.0) * xp.exp(-s)


def kernel_matrix(spec: KernelSpec, xa, xb):
    """Covariance matrix ``k(xa_i, xb_j)`` of shape ``(len(xa), len(xb))``.

    ``spec`` may also be a ``(kind, variance, lengthscale)`` triple whose
    numeric entries are torch tensors; this is how the training code passes
    differentiable hyperparameters. Leading batch dimensions of ``xa``/``xb``
    broadcast.
    """
    if isinstance(spec, KernelSpec):
        kind, variance, lengthscale = spec.kind, spec.variance, spec.lengthscale
    else:
        kind, variance, lengthscale = spec
    if isinstance(xa, torch.Tensor) or isinstance(xb, torch.Tensor):
        xa = torch.as_tensor(xa, dtype=torch.float64)
        xb = torch.as_tensor(xb, dtype=torch.float64)
        r = (xa.unsqueeze(-1) - xb.unsqueeze(-2)).abs()
        return _stationary(kind, variance, lengthscale, r)
    xa = np.asarray(xa, dtype=float)
    xb = np.asarray(xb, dtype=float)
    if xa.size == 0 or xb.size == 0:
        raise InvalidInputError("kernel_matrix needs non-empty inputs")
    if not (np.all(np.isfinite(xa)) and np.all(np.isfinite(xb))):
        raise InvalidInputError("kernel_matrix got non-finite inputs")
    r = np.abs(xa[..., :, None] - xb[..., None, :])
    return _stationary(kind, variance, lengthscale, r)


def cholesky_jitter(a, jitter0: float | None = None, role: str = "matrix"):
    """Cholesky factor of ``a + jitter * I`` for the smallest working jitter.

    The jitter is tried from the ladder ``0, jitter0, 10*jitter0, ...,
    1e6*jitter0``; ``jitter0`` defaults to 1e-6 of the mean diagonal.

    Returns:
        ``(L, jitter)`` with ``L`` lower triangular (same array type as ``a``).

    Raises:
        NumericalFailure: when even the largest jitter fails.
    """
    is_torch = isinstance(a, torch.Tensor)
    if is_torch:
        diag_mean = float(a.detach().diagonal(dim1=-2, dim2=-1).abs().mean())
    else:
        a = np.asarray(a, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise InvalidInputError(f"{role}: expected a square matrix, got shape {a.shape}")
        scale = max(np.max(np.abs(a)), 1e-300)
        if np.max(np.abs(a - a.T)) > 1e-8 * scale:
            raise InvalidInputError(f"{role}: matrix is not symmetric")
        diag_mean = float(np.mean(np.abs(np.diag(a))))
    if jitter0 is None:
        jitter0 = 1e-6 * (diag_mean if diag_mean > 0 else 1.0)
    n = a.shape[-1]
    for step in _JITTER_LADDER:
        jitter = step * jitter0
        if is_torch:
            eye = torch.eye(n, dtype=a.dtype)
            L, info = torch.linalg.cholesky_ex(a + jitter * eye)
            if int(info.max()) == 0 and bool(torch.isfinite(L).all()):
                return L, jitter
        else:
            try:
                L = np.linalg.cholesky(a + jitter * np.eye(n))
            except np.linalg.LinAlgError:
                continue
            if np.all(np.isfinite(L)) and np.all(np.diag(L) > 0):
                return L, jitter
    raise NumericalFailure(
        f"Cholesky of {role} failed even with jitter {_JITTER_LADDER[-1] * jitter0:.3g}"
    )


def _dft_basis(A: int, full: bool) -> np.ndarray:
    bins = A if full else A // 2 + 1
    k = np.arange(bins)[:, None]
    t = np.arange(A)[None, :]
    return np.exp(-2j * np.pi * ((k * t) % A) / A)


def dft_magnitude(frame, full: bool = False) -> np.ndarray:
    """Magnitudes of the discrete Fourier transform along the last axis.

    By default only the ``A // 2 + 1`` non-redundant bins of a real signal
    are returned; ``full=True`` returns all ``A`` bins.
    """
    frame = np.asarray(frame, dtype=float)
    A = frame.shape[-1]
    if A < 2:
        raise InvalidInputError(f"dft_magnitude needs at least 2 samples, got {A}")
    if not np.all(np.isfinite(frame)):
        raise InvalidInputError("dft_magnitude got non-finite input")
    return np.abs(frame @ _dft_basis(A, full).T)


def std_normal(x):
    """Standard normal ``(pdf, cdf)`` evaluated at ``x`` (scalar or array)."""
    x = np.asarray(x, dtype=float)
    pdf = np.exp(-0.5 * x**2) / math.sqrt(2.0 * math.pi)
    cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
    if pdf.ndim == 0:
        return float(pdf), float(cdf)
    return pdf, cdf


def softplus(x):
    if isinstance(x, torch.Tensor):
        return torch.nn.functional.softplus(x)
    x = np.asarray(x, dtype=float)
    return np.logaddexp(0.0, x)


def inv_softplus(y):
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise InvalidInputError("inv_softplus needs positive input")
    # log(expm1(y)) without overflow for large y
    return np.where(y > 30.0, y, np.log(np.expm1(np.minimum(y, 30.0))))


class RngStream:
    """Seeded random stream backed by numpy's PCG64 bit generator.

    Streams for parallel replications are derived with :meth:`spawn`, which
    uses ``SeedSequence(seed, spawn_key=(index,))`` so that each child is
    independent of draw order in the parent.
    """

    def __init__(self, seed: int, _spawn_key: tuple = ()):
        self.seed = int(seed)
        self._spawn_key = tuple(_spawn_key)
        ss = np.random.SeedSequence(self.seed, spawn_key=self._spawn_key)
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def spawn(self, index: int) -> "RngStream":
        return RngStream(self.seed, self._spawn_key + (int(index),))

    def normal(self, size=None) -> np.ndarray:
        return self._gen.standard_normal(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def torch_normal(self, *shape) -> torch.Tensor:
        return torch.from_numpy(self._gen.standard_normal(shape))

    def state(self) -> dict:
        return {"seed": self.seed, "spawn_key": list(self._spawn_key)}

    def __repr__(self):
        return f"RngStream(seed={self.seed}, spawn_key={self._spawn_key})"
