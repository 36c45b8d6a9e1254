"""Deep GP built from scalar SVGP layers, trained with doubly stochastic VI.

Inputs are mapped to ``[0, 1]`` through ``input_range`` and outputs are
z-scored with ``(y_mean, y_std)``; layer parameters and ``noise_variance``
live on those normalized scales. Everything a caller sees (ELBO values,
predictive means, sample paths) is mapped back to data units.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from scipy import stats

from .dataset import TimeSeriesDataset
from .errors import DegenerateInputError, InvalidInputError, NumericalFailure
from .numerics import KernelKind, KernelSpec, RngStream, cholesky_jitter, inv_softplus, kernel_matrix, softplus
from .svgp import MeanFn, SvgpLayer, kzz_cholesky, predict, whitened_conditional, whitened_kl

__all__ = [
    "DgpModel",
    "TrainConfig",
    "elbo",
    "elbo_objective",
    "train",
    "sample_paths",
    "predict_mean",
    "predict_moments",
    "white_noise_test",
    "grow_inducing",
    "save_checkpoint",
    "load_checkpoint",
]

log = logging.getLogger(__name__)
torch.set_default_dtype(torch.float64)

_LOG_2PI = math.log(2.0 * math.pi)
CHECKPOINT_FORMAT = "alcpd-dgp"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    learning_rate: float = 0.1
    steps: int = 500
    mc_samples_elbo: int = 5
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not 0.0 <= self.learning_rate <= 1.0:
            raise InvalidInputError(f"learning_rate must lie in [0, 1], got {self.learning_rate}")
        if self.steps < 1 or self.mc_samples_elbo < 1:
            raise InvalidInputError("steps and mc_samples_elbo must be >= 1")


@dataclass
class DgpModel:
    """A chain of scalar SVGP layers plus Gaussian observation noise."""

    layers: list
    noise_variance: float
    input_range: tuple
    y_mean: float = 0.0
    y_std: float = 1.0
    num_inducing: int = 20

    def __post_init__(self):
        if not self.layers:
            raise InvalidInputError("a DGP needs at least one layer")
        if not self.noise_variance > 0:
            raise InvalidInputError("noise_variance must be positive")
        lo, hi = (float(v) for v in self.input_range)
        if not hi > lo:
            raise InvalidInputError(f"degenerate input range {self.input_range}")
        self.input_range = (lo, hi)

    @property
    def depth(self) -> int:
        return len(self.layers)

    def normalize_t(self, t) -> np.ndarray:
        lo, hi = self.input_range
        return (np.asarray(t, dtype=float) - lo) / (hi - lo)

    def normalize_y(self, y) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_std

    @classmethod
    def initialize(cls, t, y, kernel="matern52", depth: int = 2, num_inducing: int = 20,
                   input_range=None, noise_variance: float = 0.1, lengthscale: float = 0.2,
                   variance: float = 1.0, inner_variance: float = 0.1,
                   standardize: bool = True) -> "DgpModel":
        """Default model for data ``(t, y)``.

        Inner layers use an identity prior mean and the last layer a zero
        mean; all layers start with inducing inputs at data quantiles.
        """
        if depth < 1:
            raise InvalidInputError("depth must be >= 1")
        t = np.asarray(t, dtype=float).reshape(-1)
        y = np.asarray(y, dtype=float).reshape(-1)
        if t.size == 0 or t.size != y.size:
            raise InvalidInputError("need matching, non-empty t and y")
        if input_range is None:
            input_range = (float(t.min()), float(t.max()))
            if input_range[1] <= input_range[0]:
                input_range = (input_range[0] - 0.5, input_range[0] + 0.5)
        y_mean, y_std = 0.0, 1.0
        if standardize:
            y_mean = float(y.mean())
            y_std = float(y.std()) if y.size > 1 and y.std() > 0 else 1.0
        kind = KernelKind.parse(kernel)
        lo, hi = input_range
        x = (t - lo) / (hi - lo)
        layers = []
        for i in range(depth):
            last = i == depth - 1
            spec = KernelSpec(kind, variance if last else inner_variance, lengthscale)
            mean_fn = MeanFn.ZERO if last else MeanFn.IDENTITY
            layers.append(SvgpLayer.initial(x, spec, num_inducing, mean_fn))
        return cls(layers, noise_variance, tuple(input_range), y_mean, y_std, num_inducing)

    def copy(self) -> "DgpModel":
        return model_from_dict(model_to_dict(self))


class _Params:
    """Unconstrained torch view of a model's trainable parameters.

    Optimization runs in whitened coordinates: per layer the softplus-raw
    variance and lengthscale, Z, ``v = Lzz^{-1}(m - m(Z))`` and a raw
    lower-triangular ``Sv = Lzz^{-1} S_factor`` whose diagonal goes through
    softplus. :meth:`to_model` maps back to ``(m, S_factor)``.
    """

    def __init__(self, model: DgpModel):
        self.kinds = [layer.kernel.kind for layer in model.layers]
        self.mean_fns = [layer.mean_fn for layer in model.layers]
        self.tensors = []
        for layer in model.layers:
            k = layer.kernel
            Z = torch.tensor(layer.Z.copy())
            with torch.no_grad():
                _, L = kzz_cholesky(k.kind, torch.tensor(k.variance), torch.tensor(k.lengthscale), Z)
            L = L.numpy()
            v = np.linalg.solve(L, layer.m - layer.mean_fn(layer.Z))
            sv = np.tril(np.linalg.solve(L, np.tril(layer.S_factor)))
            d = np.maximum(np.abs(np.diag(sv)), 1e-12)
            np.fill_diagonal(sv, inv_softplus(d))
            self.tensors += [
                torch.tensor(float(inv_softplus(k.variance))),
                torch.tensor(float(inv_softplus(k.lengthscale))),
                Z,
                torch.tensor(v),
                torch.tensor(sv),
            ]
        self.tensors.append(torch.tensor(float(inv_softplus(model.noise_variance))))
        for p in self.tensors:
            p.requires_grad_(True)

    def layer(self, i):
        """``(kind, variance, lengthscale, Z, v, Sv, mean_fn)`` of layer ``i``."""
        raw_var, raw_ls, Z, v, sv_raw = self.tensors[5 * i: 5 * i + 5]
        sv = torch.tril(sv_raw, -1) + torch.diag(softplus(torch.diagonal(sv_raw)))
        return self.kinds[i], softplus(raw_var), softplus(raw_ls), Z, v, sv, self.mean_fns[i]

    @property
    def noise_variance(self):
        return softplus(self.tensors[-1])

    def flat(self) -> np.ndarray:
        return np.concatenate([p.detach().numpy().reshape(-1) for p in self.tensors])

    def set_flat(self, vec):
        vec = np.asarray(vec, dtype=float)
        i = 0
        with torch.no_grad():
            for p in self.tensors:
                n = p.numel()
                p.copy_(torch.from_numpy(vec[i:i + n].reshape(p.shape)))
                i += n

    def grad_flat(self) -> np.ndarray:
        return np.concatenate([
            (p.grad if p.grad is not None else torch.zeros_like(p)).numpy().reshape(-1)
            for p in self.tensors
        ])

    def to_model(self, template: DgpModel) -> DgpModel:
        layers = []
        with torch.no_grad():
            chol = _cholesky_all(self)
            for i in range(len(self.kinds)):
                kind, var, ls, Z, v, sv, mean_fn = self.layer(i)
                m = mean_fn(Z) + chol[i] @ v
                sf = torch.tril(chol[i] @ sv)
                layers.append(SvgpLayer(KernelSpec(kind, float(var), float(ls)),
                                        Z.numpy().copy(), m.numpy().copy(), sf.numpy().copy(), mean_fn))
            noise = float(self.noise_variance)
        return DgpModel(layers, noise, template.input_range, template.y_mean,
                        template.y_std, template.num_inducing)


def _cholesky_all(params: _Params):
    out = []
    for i in range(len(params.kinds)):
        kind, var, ls, Z, *_ = params.layer(i)
        out.append(kzz_cholesky(kind, var, ls, Z, role=f"k(Z,Z) of layer {i + 1}")[1])
    return out


def _forward(params: _Params, x, eps, sample_last: bool = False, chol=None):
    """Propagate ``x`` through the layers with reparameterized draws.

    ``eps`` has shape ``(L-1, S, N)`` (or ``(L, S, N)`` with
    ``sample_last``). Returns the final layer's marginal mean and variance,
    or the final draw when ``sample_last`` is set.
    """
    L = len(params.kinds)
    chol = chol or _cholesky_all(params)
    f = x.expand(eps.shape[1], -1) if eps.shape[0] else x.unsqueeze(0)
    for i in range(L):
        kind, var, ls, Z, v, sv, mean_fn = params.layer(i)
        mean, fvar = whitened_conditional(kind, var, ls, Z, v, sv, mean_fn, f, chol[i])
        fvar = fvar.clamp_min(1e-20)
        if i < L - 1 or sample_last:
            f = mean + torch.sqrt(fvar) * eps[i]
    if sample_last:
        return f
    return mean, fvar


def _elbo_normalized(params: _Params, x, y, eps):
    """ELBO on normalized scales; the last layer's expectation is exact."""
    chol = _cholesky_all(params)
    mean, var = _forward(params, x, eps, chol=chol)
    noise = params.noise_variance
    ell = -0.5 * (_LOG_2PI + torch.log(noise)) - 0.5 * ((y - mean) ** 2 + var) / noise
    kl = 0.0
    for i in range(len(params.kinds)):
        _, _, _, _, v, sv, _ = params.layer(i)
        kl = kl + whitened_kl(v, sv)
    return ell.mean(0).sum() - kl


def _data_tensors(model: DgpModel, data: TimeSeriesDataset):
    if len(data) == 0:
        raise InvalidInputError("ELBO needs at least one observation")
    if data.dims != 1:
        raise InvalidInputError("a DgpModel fits a single output dimension")
    x = torch.from_numpy(model.normalize_t(data.t))
    y = torch.from_numpy(model.normalize_y(data.y))
    return x, y


def _draw_eps(rng: RngStream, depth: int, mc: int, n: int, sample_last=False):
    return rng.torch_normal(depth if sample_last else depth - 1, mc, n)


def elbo(model: DgpModel, data: TimeSeriesDataset, rng: RngStream, mc_samples: int = 5) -> float:
    """Monte Carlo ELBO estimate in data units (deterministic given ``rng``).

    Inner layers are sampled; the Gaussian expectation over the final layer
    is computed in closed form for each inner draw.
    """
    x, y = _data_tensors(model, data)
    eps = _draw_eps(rng, model.depth, mc_samples, x.numel())
    params = _Params(model)
    with torch.no_grad():
        val = float(_elbo_normalized(params, x, y, eps))
    return val - x.numel() * math.log(model.y_std)


def elbo_objective(model: DgpModel, data: TimeSeriesDataset, eps):
    """ELBO and its gradient as functions of the flat unconstrained parameters.

    ``eps`` is held fixed (common random numbers), which makes the returned
    function deterministic and suitable for finite-difference checks.

    Returns:
        ``(value_fn, grad_fn, x0)``.
    """
    x, y = _data_tensors(model, data)
    eps = torch.as_tensor(np.asarray(eps, dtype=float))
    params = _Params(model)
    x0 = params.flat()
    shift = x.numel() * math.log(model.y_std)

    def value_fn(vec):
        params.set_flat(vec)
        with torch.no_grad():
            return float(_elbo_normalized(params, x, y, eps)) - shift

    def grad_fn(vec):
        params.set_flat(vec)
        for p in params.tensors:
            p.grad = None
        _elbo_normalized(params, x, y, eps).backward()
        return params.grad_flat()

    return value_fn, grad_fn, x0


def train(model: DgpModel, data: TimeSeriesDataset, cfg: TrainConfig | None = None):
    """Maximize the ELBO with Adam, starting from the model's parameters.

    Returns:
        ``(trained_model, elbo_trace)``; the trace holds the per-step ELBO
        estimate in data units. The input model is not modified.

    Raises:
        NumericalFailure: the ELBO became non-finite or a Cholesky failed.
    """
    cfg = cfg or TrainConfig()
    x, y = _data_tensors(model, data)
    params = _Params(model)
    opt = torch.optim.Adam(params.tensors, lr=cfg.learning_rate,
                           betas=(cfg.adam_beta1, cfg.adam_beta2), eps=cfg.adam_eps)
    rng = RngStream(cfg.seed)
    shift = x.numel() * math.log(model.y_std)
    trace = np.empty(cfg.steps)
    best = None
    for step in range(cfg.steps):
        eps = _draw_eps(rng, model.depth, cfg.mc_samples_elbo, x.numel())
        opt.zero_grad()
        try:
            obj = _elbo_normalized(params, x, y, eps)
        except NumericalFailure as exc:
            raise NumericalFailure(f"training step {step}: {exc}") from exc
        value = obj.item()
        if not math.isfinite(value):
            raise NumericalFailure(f"non-finite ELBO at training step {step}")
        trace[step] = value - shift
        (-obj).backward()
        if not all(torch.isfinite(p.grad).all() for p in params.tensors if p.grad is not None):
            raise NumericalFailure(f"non-finite ELBO gradient at training step {step}")
        opt.step()
    return params.to_model(model), trace


def _sorted_grid(grid):
    grid = np.asarray(grid, dtype=float).reshape(-1)
    order = np.argsort(grid, kind="stable")
    inverse = np.empty_like(order)
    inverse[order] = np.arange(order.size)
    return grid[order], inverse


def sample_paths(model: DgpModel, grid, count: int, rng: RngStream) -> np.ndarray:
    """``count`` noise-free latent paths on ``grid``, shape ``(count, len(grid))``.

    Each path is one recursive pass with marginal reparameterized draws in
    every layer; no observation noise is added.
    """
    g, inverse = _sorted_grid(grid)
    if g.size == 0:
        return np.zeros((count, 0))
    params = _Params(model)
    eps = _draw_eps(rng, model.depth, count, g.size, sample_last=True)
    with torch.no_grad():
        f = _forward(params, torch.from_numpy(model.normalize_t(g)), eps, sample_last=True)
    paths = model.y_mean + model.y_std * f.numpy()
    return paths[:, inverse]


def predict_moments(model: DgpModel, grid, n_paths: int = 100, seed: int = 0):
    """Monte Carlo predictive mean and variance of the latent function.

    Inner layers are sampled ``n_paths`` times; the final layer contributes
    its exact conditional moments for each draw.
    """
    g, inverse = _sorted_grid(grid)
    if g.size == 0:
        return np.zeros(0), np.zeros(0)
    params = _Params(model)
    mc = n_paths if model.depth > 1 else 1
    eps = _draw_eps(RngStream(seed), model.depth, mc, g.size)
    with torch.no_grad():
        mean, var = _forward(params, torch.from_numpy(model.normalize_t(g)), eps)
    mean, var = mean.numpy(), var.numpy()
    mu = mean.mean(0)
    total_var = var.mean(0) + mean.var(0)
    return (model.y_mean + model.y_std * mu)[inverse], (model.y_std**2 * total_var)[inverse]


def predict_mean(model: DgpModel, grid, n_paths: int = 100, seed: int = 0) -> np.ndarray:
    """The pipeline's ``x(t)``: Monte Carlo mean of the DGP on ``grid``."""
    return predict_moments(model, grid, n_paths, seed)[0]


def white_noise_test(residuals, lags: int = 10, alpha: float = 0.05):
    """Ljung-Box portmanteau test for residual autocorrelation.

    Returns:
        ``(Q, p_value, passed)`` where ``passed`` means no significant
        autocorrelation at level ``alpha``.
    """
    e = np.asarray(residuals, dtype=float).reshape(-1)
    n = e.size
    if not 1 <= lags < n:
        raise InvalidInputError(f"need 1 <= lags < n, got lags={lags}, n={n}")
    e = e - e.mean()
    denom = float(e @ e)
    if denom <= 1e-300 * n:
        raise DegenerateInputError("residuals have zero variance")
    rho = np.array([e[k:] @ e[:-k] for k in range(1, lags + 1)]) / denom
    q = n * (n + 2) * float(np.sum(rho**2 / (n - np.arange(1, lags + 1))))
    p = float(stats.chi2.sf(q, lags))
    return q, p, p >= alpha


def grow_inducing(model: DgpModel, new_t) -> DgpModel:
    """Add inducing points at newly observed inputs, keeping q(f) unchanged.

    Each layer gains up to ``num_inducing - M`` points located at the
    layer's (mean-propagated) inputs for ``new_t``. The new inducing values
    are given the prior conditional ``p(u_new | u)`` under ``q(u)``, so the
    predictive distribution and the KL term are preserved.
    """
    new_t = np.asarray(new_t, dtype=float).reshape(-1)
    if new_t.size == 0 or all(l.num_inducing >= model.num_inducing for l in model.layers):
        return model
    h = model.normalize_t(new_t)
    layers = []
    for layer in model.layers:
        room = model.num_inducing - layer.num_inducing
        nxt = predict(layer, h).mean
        if room > 0:
            span = max(np.ptp(layer.Z), 1e-6)
            cand = []
            for v in h:
                if np.min(np.abs(np.r_[layer.Z, cand] - v)) > 1e-3 * span:
                    cand.append(v)
                if len(cand) == room:
                    break
            if cand:
                layer = _extend_layer(layer, np.asarray(cand))
        layers.append(layer)
        h = nxt
    return DgpModel(layers, model.noise_variance, model.input_range, model.y_mean,
                    model.y_std, model.num_inducing)


def _extend_layer(layer: SvgpLayer, z_new) -> SvgpLayer:
    k = layer.kernel
    Z = layer.Z
    Kzz = kernel_matrix(k, Z, Z) + 1e-9 * k.variance * np.eye(Z.size)
    Lzz, _ = cholesky_jitter(Kzz, role="k(Z,Z)")
    Kzn = kernel_matrix(k, Z, z_new)
    alpha = np.linalg.solve(Lzz.T, np.linalg.solve(Lzz, Kzn))
    S = layer.S
    m_new = layer.mean_fn(z_new) + alpha.T @ (layer.m - layer.mean_fn(Z))
    c_new = kernel_matrix(k, z_new, z_new) - alpha.T @ (Kzz - S) @ alpha
    cross = S @ alpha
    joint = np.block([[S, cross], [cross.T, c_new]])
    joint = 0.5 * (joint + joint.T)
    L, _ = cholesky_jitter(joint, jitter0=1e-8 * k.variance, role="extended S")
    return SvgpLayer(k, np.r_[Z, z_new], np.r_[layer.m, m_new], L, layer.mean_fn)


def model_to_dict(model: DgpModel) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "noise_variance": model.noise_variance,
        "input_range": list(model.input_range),
        "y_mean": model.y_mean,
        "y_std": model.y_std,
        "num_inducing": model.num_inducing,
        "layers": [
            {
                "kernel": {"kind": l.kernel.kind.value, "variance": l.kernel.variance,
                           "lengthscale": l.kernel.lengthscale},
                "mean_fn": l.mean_fn.value,
                "Z": l.Z.tolist(),
                "m": l.m.tolist(),
                "S_factor": l.S_factor.tolist(),
            }
            for l in model.layers
        ],
    }


def model_from_dict(d: dict) -> DgpModel:
    if d.get("format") != CHECKPOINT_FORMAT:
        raise InvalidInputError("not a DGP checkpoint")
    if d.get("version") != CHECKPOINT_VERSION:
        raise InvalidInputError(f"unsupported checkpoint version {d.get('version')}")
    layers = [
        SvgpLayer(KernelSpec(l["kernel"]["kind"], l["kernel"]["variance"], l["kernel"]["lengthscale"]),
                  np.array(l["Z"]), np.array(l["m"]), np.array(l["S_factor"]), l["mean_fn"])
        for l in d["layers"]
    ]
    return DgpModel(layers, d["noise_variance"], tuple(d["input_range"]), d["y_mean"],
                    d["y_std"], d.get("num_inducing", 20))


def save_checkpoint(model: DgpModel, path, **extra):
    """Write the model (and any JSON-able ``extra`` metadata) as JSON text."""
    d = model_to_dict(model)
    if extra:
        d["meta"] = extra
    Path(path).write_text(json.dumps(d, indent=1, sort_keys=True) + "\n")


def load_checkpoint(path) -> DgpModel:
    return model_from_dict(json.loads(Path(path).read_text()))
