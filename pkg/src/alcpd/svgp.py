"""Single sparse variational GP layer.

The layer stores its variational posterior ``q(u) = N(m, S)`` over the
inducing values ``u = f(Z)`` directly (no whitening), with ``S`` held as a
lower-triangular factor. The predictive equations are

    mean(x)   = m(x) + alpha(x)^T (m - m(Z))
    cov(x,x') = k(x,x') - alpha(x)^T (k(Z,Z) - S) alpha(x')
    alpha(x)  = k(Z,Z)^{-1} k(Z,x)

and are evaluated through a Cholesky factor of ``k(Z,Z)``. All heavy lifting
happens in float64 torch so that the same code provides gradients for
training; the public functions return numpy arrays.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .errors import InvalidInputError, NumericalFailure
from .numerics import KernelKind, KernelSpec, RngStream, cholesky_jitter, kernel_matrix

__all__ = [
    "MeanFn",
    "SvgpLayer",
    "GaussianPrediction",
    "predict",
    "layer_kl",
    "layer_elbo",
    "sample_through",
    "conditional",
    "gauss_kl",
]

# Fixed relative jitter added to k(Z,Z) before the jitter ladder.
BASE_JITTER = 1e-9
_LOG_2PI = math.log(2.0 * math.pi)


class MeanFn(str, enum.Enum):
    ZERO = "zero"
    IDENTITY = "identity"

    def __call__(self, x):
        if self is MeanFn.ZERO:
            return x * 0.0
        return x


@dataclass
class SvgpLayer:
    """Kernel, inducing inputs and variational parameters of one layer."""

    kernel: KernelSpec
    Z: np.ndarray
    m: np.ndarray
    S_factor: np.ndarray
    mean_fn: MeanFn = MeanFn.ZERO

    def __post_init__(self):
        self.mean_fn = MeanFn(self.mean_fn)
        self.Z = np.asarray(self.Z, dtype=float).reshape(-1)
        self.m = np.asarray(self.m, dtype=float).reshape(-1)
        self.S_factor = np.tril(np.asarray(self.S_factor, dtype=float))
        M = self.Z.size
        if M < 1:
            raise InvalidInputError("a layer needs at least one inducing point")
        if self.m.shape != (M,) or self.S_factor.shape != (M, M):
            raise InvalidInputError(
                f"inconsistent layer shapes: Z {self.Z.shape}, m {self.m.shape}, "
                f"S_factor {self.S_factor.shape}"
            )
        if not np.all(np.isfinite(self.Z)):
            raise InvalidInputError("inducing inputs must be finite")

    @property
    def num_inducing(self) -> int:
        return self.Z.size

    @property
    def S(self) -> np.ndarray:
        return self.S_factor @ self.S_factor.T

    @classmethod
    def initial(cls, inputs, kernel: KernelSpec, num_inducing: int = 20,
                mean_fn=MeanFn.ZERO, s_scale: float = 1e-2) -> "SvgpLayer":
        """Fresh layer with Z at empirical quantiles of ``inputs``.

        The variational mean starts at the prior mean ``m(Z)`` (zero residual).
        ``S`` starts at ``s_scale**2 * k(Z,Z) / variance``: marginal standard
        deviation ``s_scale`` like ``s_scale * I``, but inside the span of
        ``k(Z,Z)`` so the whitened factor stays small for smooth kernels.
        """
        inputs = np.asarray(inputs, dtype=float).reshape(-1)
        if inputs.size == 0:
            raise InvalidInputError("cannot place inducing points without inputs")
        M = min(num_inducing, inputs.size)
        Z = np.quantile(inputs, np.linspace(0.0, 1.0, M)) if M > 1 else np.array([np.median(inputs)])
        mean_fn = MeanFn(mean_fn)
        with torch.no_grad():
            _, L = kzz_cholesky(kernel.kind, _t(kernel.variance), _t(kernel.lengthscale), _t(Z))
        S_factor = s_scale * L.numpy() / math.sqrt(kernel.variance)
        return cls(kernel, Z, mean_fn(Z).copy(), S_factor, mean_fn)

    def with_params(self, **kw) -> "SvgpLayer":
        return replace(self, **kw)


@dataclass
class GaussianPrediction:
    mean: np.ndarray
    variance: np.ndarray
    covariance: np.ndarray | None = field(default=None, repr=False)


def _t(x):
    return torch.as_tensor(np.asarray(x, dtype=float), dtype=torch.float64)


def kzz_cholesky(kind, variance, lengthscale, Z, role="k(Z,Z)"):
    Kzz = kernel_matrix((kind, variance, lengthscale), Z, Z)
    eye = torch.eye(Z.shape[-1], dtype=torch.float64)
    Kzz = Kzz + BASE_JITTER * variance * eye
    L, _ = cholesky_jitter(Kzz, role=role)
    return Kzz, L


def conditional(kind, variance, lengthscale, Z, m, S_factor, mean_fn, x,
                full_cov: bool = False, Lzz=None):
    """Torch predictive mean and (marginal or full) covariance at ``x``.

    ``x`` may carry leading batch dimensions ``(..., N)``; outputs match.
    Passing a precomputed ``Lzz`` skips the Cholesky of ``k(Z,Z)``.
    """
    if Lzz is None:
        _, Lzz = kzz_cholesky(kind, variance, lengthscale, Z)
    spec = (kind, variance, lengthscale)
    Kzx = kernel_matrix(spec, Z, x)  # (..., M, N)
    A = torch.linalg.solve_triangular(Lzz, Kzx, upper=False)
    alpha = torch.linalg.solve_triangular(Lzz.transpose(-1, -2), A, upper=True)
    resid = m - mean_fn(Z)
    mean = mean_fn(x) + (alpha * resid.unsqueeze(-1)).sum(-2)
    B = S_factor.transpose(-1, -2) @ alpha
    if full_cov:
        Kxx = kernel_matrix(spec, x, x)
        cov = Kxx - A.transpose(-1, -2) @ A + B.transpose(-1, -2) @ B
        return mean, cov
    var = variance - (A**2).sum(-2) + (B**2).sum(-2)
    return mean, var


def gauss_kl(m, S_factor, prior_mean, Kzz_chol):
    """KL[N(m, S) || N(prior_mean, K)] with ``K = Kzz_chol Kzz_chol^T``."""
    M = m.shape[-1]
    Linv_Sf = torch.linalg.solve_triangular(Kzz_chol, S_factor, upper=False)
    diff = torch.linalg.solve_triangular(Kzz_chol, (prior_mean - m).unsqueeze(-1), upper=False)
    trace = (Linv_Sf**2).sum()
    maha = (diff**2).sum()
    logdet_k = 2.0 * torch.log(Kzz_chol.diagonal()).sum()
    logdet_s = torch.log(S_factor.diagonal().square()).sum()
    return 0.5 * (trace + maha - M + logdet_k - logdet_s)


def _layer_tensors(layer: SvgpLayer):
    return (layer.kernel.kind, _t(layer.kernel.variance), _t(layer.kernel.lengthscale),
            _t(layer.Z), _t(layer.m), _t(layer.S_factor), layer.mean_fn)


def predict(layer: SvgpLayer, xs, full_cov: bool = False) -> GaussianPrediction:
    """Predictive marginal (or full) Gaussian of the layer at ``xs``."""
    xs = np.asarray(xs, dtype=float).reshape(-1)
    if not np.all(np.isfinite(xs)):
        raise InvalidInputError("predict got non-finite inputs")
    if xs.size == 0:
        return GaussianPrediction(np.zeros(0), np.zeros(0), np.zeros((0, 0)) if full_cov else None)
    with torch.no_grad():
        mean, cov = conditional(*_layer_tensors(layer), _t(xs), full_cov=full_cov)
    mean = mean.numpy()
    if full_cov:
        cov = cov.numpy()
        cov = 0.5 * (cov + cov.T)
        var = np.diag(cov).copy()
    else:
        var = cov.numpy()
        cov = None
    if np.any(var < -1e-6 * max(1.0, layer.kernel.variance)):
        raise NumericalFailure(f"predictive variance too negative: {var.min():.3g}")
    return GaussianPrediction(mean, np.maximum(var, 0.0), cov)


def layer_kl(layer: SvgpLayer) -> float:
    """KL divergence between ``q(u)`` and the prior ``N(m(Z), k(Z,Z))``."""
    kind, var, ls, Z, m, Sf, mean_fn = _layer_tensors(layer)
    with torch.no_grad():
        _, L = kzz_cholesky(kind, var, ls, Z)
        kl = gauss_kl(m, Sf, mean_fn(Z), L)
    return max(float(kl), 0.0)


def layer_elbo(layer: SvgpLayer, x, y, noise_variance: float) -> float:
    """Closed-form single-layer ELBO with a Gaussian likelihood."""
    pred = predict(layer, x)
    y = np.asarray(y, dtype=float).reshape(-1)
    ell = -0.5 * (_LOG_2PI + math.log(noise_variance)) - 0.5 * ((y - pred.mean) ** 2 + pred.variance) / noise_variance
    return float(ell.sum()) - layer_kl(layer)


def sample_through(layer: SvgpLayer, inputs, rng: RngStream, eps=None) -> np.ndarray:
    """One reparameterized draw ``mean + sqrt(var) * eps`` using marginals.

    ``eps`` overrides the standard-normal draw from ``rng`` when given.
    """
    pred = predict(layer, inputs)
    if eps is None:
        eps = rng.normal(pred.mean.shape)
    return pred.mean + np.sqrt(pred.variance) * np.asarray(eps, dtype=float)


def whitened_conditional(kind, variance, lengthscale, Z, v, Sv, mean_fn, x, Lzz):
    """Marginal predictive moments for whitened parameters.

    With ``Lzz Lzz^T = k(Z,Z)``, the whitened pair ``(v, Sv)`` corresponds to
    ``m = m(Z) + Lzz v`` and ``S_factor = Lzz Sv``.
    """
    Kzx = kernel_matrix((kind, variance, lengthscale), Z, x)
    A = torch.linalg.solve_triangular(Lzz, Kzx, upper=False)
    mean = mean_fn(x) + (A * v.unsqueeze(-1)).sum(-2)
    B = Sv.transpose(-1, -2) @ A
    var = variance - (A**2).sum(-2) + (B**2).sum(-2)
    return mean, var


def whitened_kl(v, Sv):
    """KL[N(v, Sv Sv^T) || N(0, I)]."""
    return 0.5 * ((Sv**2).sum() + (v**2).sum() - v.shape[-1]
                  - torch.log(Sv.diagonal().square()).sum())
