"""Derivative-aware change detection baseline.

An exact GP with an RBF kernel is fitted to the sampled points; the
posterior of its derivative process drives an expected-improvement
acquisition, and change points are read off as the largest separated
maxima of the absolute posterior-mean derivative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from ..dataset import INITIAL, QUERIED, TimeSeriesDataset
from ..detect import ChangePointSet, detect_top_k
from ..errors import BudgetExhausted, ExhaustedCandidatesError, InvalidInputError, NumericalFailure
from ..numerics import cholesky_jitter, inv_softplus, softplus, std_normal
from .acquisition import select_batch
from .loop import _derive_seed, initial_design
from .oracle import Oracle

__all__ = [
    "rbf_derivative_kernels",
    "DerivativeGP",
    "dacd_acquisition",
    "DacdConfig",
    "DacdState",
    "dacd_baseline",
]


def rbf_derivative_kernels(variance, lengthscale, xa, xb):
    """RBF kernel and its derivatives between ``xa`` and ``xb``.

    Returns:
        ``(k, dk, d2k)`` with ``dk[i, j] = dk(x, x')/dx`` at ``x = xa[i]``,
        ``x' = xb[j]`` and ``d2k = d^2 k / dx dx'``.
    """
    xa = np.asarray(xa, dtype=float).reshape(-1)
    xb = np.asarray(xb, dtype=float).reshape(-1)
    d = xa[:, None] - xb[None, :]
    l2 = lengthscale**2
    k = variance * np.exp(-0.5 * d**2 / l2)
    dk = -d / l2 * k
    d2k = (1.0 / l2 - d**2 / l2**2) * k
    return k, dk, d2k


@dataclass
class DerivativeGP:
    """Exact RBF GP on normalized scales with derivative predictions."""

    variance: float = 1.0
    lengthscale: float = 0.2
    noise_variance: float = 0.1
    input_range: tuple = (0.0, 1.0)
    y_mean: float = 0.0
    y_std: float = 1.0
    x: np.ndarray = None
    y: np.ndarray = None

    @property
    def _span(self):
        return self.input_range[1] - self.input_range[0]

    def fit(self, t, y, steps: int = 200, learning_rate: float = 0.1, standardize: bool = True,
            refresh_scaling: bool = True) -> "DerivativeGP":
        """Set the data and maximize the log marginal likelihood with Adam."""
        t = np.asarray(t, dtype=float).reshape(-1)
        y = np.asarray(y, dtype=float).reshape(-1)
        if t.size == 0 or t.size != y.size:
            raise InvalidInputError("need matching, non-empty t and y")
        if standardize and refresh_scaling:
            self.y_mean = float(y.mean())
            self.y_std = float(y.std()) if y.size > 1 and y.std() > 0 else 1.0
        self.x = (t - self.input_range[0]) / self._span
        self.y = (y - self.y_mean) / self.y_std
        if steps > 0 and learning_rate > 0:
            self._optimize(steps, learning_rate)
        return self

    def _optimize(self, steps, lr):
        raw = [torch.tensor(float(inv_softplus(v)), requires_grad=True)
               for v in (self.variance, self.lengthscale, self.noise_variance)]
        x = torch.from_numpy(self.x)
        y = torch.from_numpy(self.y)
        opt = torch.optim.Adam(raw, lr=lr)
        n = x.numel()
        for step in range(steps):
            opt.zero_grad()
            var, ls, noise = (softplus(r) for r in raw)
            K = var * torch.exp(-0.5 * ((x[:, None] - x[None, :]) / ls) ** 2)
            K = K + (noise + 1e-8) * torch.eye(n)
            L, _ = cholesky_jitter(K, role="DACD kernel matrix")
            a = torch.cholesky_solve(y[:, None], L)
            nll = 0.5 * (y[:, None] * a).sum() + torch.log(L.diagonal()).sum() + 0.5 * n * math.log(2 * math.pi)
            if not torch.isfinite(nll):
                raise NumericalFailure(f"non-finite GP marginal likelihood at step {step}")
            nll.backward()
            opt.step()
        with torch.no_grad():
            self.variance, self.lengthscale, self.noise_variance = (float(softplus(r)) for r in raw)

    def _solve(self):
        K, _, _ = rbf_derivative_kernels(self.variance, self.lengthscale, self.x, self.x)
        K = K + (self.noise_variance + 1e-8) * np.eye(self.x.size)
        L, _ = cholesky_jitter(K, role="DACD kernel matrix")
        return L

    def predict(self, t):
        """Posterior mean of the function in data units."""
        xs = (np.asarray(t, dtype=float) - self.input_range[0]) / self._span
        L = self._solve()
        ks, _, _ = rbf_derivative_kernels(self.variance, self.lengthscale, xs, self.x)
        alpha = np.linalg.solve(L.T, np.linalg.solve(L, self.y))
        return self.y_mean + self.y_std * (ks @ alpha)

    def derivative(self, t):
        """Posterior mean and std of ``df/dt`` in data units."""
        xs = (np.asarray(t, dtype=float).reshape(-1) - self.input_range[0]) / self._span
        L = self._solve()
        _, dk, _ = rbf_derivative_kernels(self.variance, self.lengthscale, xs, self.x)
        alpha = np.linalg.solve(L.T, np.linalg.solve(L, self.y))
        mu = dk @ alpha
        v = np.linalg.solve(L, dk.T)
        prior = self.variance / self.lengthscale**2
        var = np.maximum(prior - np.sum(v**2, axis=0), 0.0)
        scale = self.y_std / self._span
        return mu * scale, np.sqrt(var) * scale


def dacd_acquisition(mu_d, sigma_d, incumbent: float, xi: float = 0.01) -> np.ndarray:
    """Expected improvement of the derivative over ``incumbent``.

    Where ``sigma_d`` is zero the limit ``max(mu_d - incumbent - xi, 0)``
    is used.
    """
    mu = np.asarray(mu_d, dtype=float)
    sd = np.asarray(sigma_d, dtype=float)
    imp = mu - incumbent - xi
    out = np.maximum(imp, 0.0)
    pos = sd > 0
    if np.any(pos):
        g = imp[pos] / sd[pos]
        pdf, cdf = std_normal(g)
        out = out.astype(float)
        out[pos] = sd[pos] * (g * cdf + pdf)
    return out


@dataclass
class DacdConfig:
    learning_rate: float = 0.1
    init_steps: int = 500
    warm_steps: int = 200
    xi: float = 0.01
    delta: float = 15.0
    batch_size: int = 1


@dataclass
class DacdState:
    dataset: TimeSeriesDataset
    gp: DerivativeGP
    grid: np.ndarray
    history: list = field(default_factory=list)
    partial: bool = False

    @property
    def selected(self) -> np.ndarray:
        return np.array([x for rec in self.history for x in rec["selected"]])


def dacd_baseline(oracle: Oracle, init_points: int = 10, iterations: int = 10, k: int = 1,
                  cfg: DacdConfig | None = None, seed: int = 0):
    """Run the derivative-EI active learning loop and detect ``k`` change points.

    Returns:
        ``(DacdState, ChangePointSet)``.
    """
    cfg = cfg or DacdConfig()
    grid = np.asarray(oracle.grid, dtype=float)
    if oracle.remaining is not None and oracle.remaining < init_points:
        raise BudgetExhausted("oracle budget is smaller than the initial design")
    x0 = initial_design(grid, init_points)
    y0 = np.array([oracle.query(x) for x in x0], dtype=float)
    if y0.ndim > 1:
        y0 = y0[:, 0]
    data = TimeSeriesDataset(x0, y0, [INITIAL] * len(x0))
    torch.manual_seed(_derive_seed(seed, 7))
    gp = DerivativeGP(input_range=(float(grid[0]), float(grid[-1])))
    gp.fit(data.t, data.y, cfg.init_steps, cfg.learning_rate)
    state = DacdState(data, gp, grid)
    sampled = set(data.t.tolist())
    for it in range(1, iterations + 1):
        cand = np.array([g for g in grid if g not in sampled])
        if cand.size == 0:
            state.partial = True
            break
        mu, sd = gp.derivative(cand)
        mu_s, _ = gp.derivative(state.dataset.t)
        incumbent = float(mu_s.max())
        af = dacd_acquisition(mu, sd, incumbent, cfg.xi)
        try:
            chosen = select_batch(af, cand, cfg.batch_size, 0.0)
        except ExhaustedCandidatesError:
            state.partial = True
            break
        new_t, new_y = [], []
        for x in chosen:
            try:
                y = oracle.query(x)
            except BudgetExhausted:
                state.partial = True
                break
            new_t.append(float(x))
            new_y.append(float(np.atleast_1d(y)[0]))
        if not new_t:
            break
        state.dataset = state.dataset.append(new_t, np.array(new_y), QUERIED)
        sampled.update(new_t)
        gp.fit(state.dataset.t, state.dataset.y, cfg.warm_steps, cfg.learning_rate, refresh_scaling=False)
        state.history.append({"iteration": it, "selected": new_t,
                              "af_selected": [float(af[np.searchsorted(cand, x)]) for x in new_t],
                              "incumbent": incumbent})
        if state.partial:
            break
    mu_grid, _ = gp.derivative(grid)
    cps = detect_top_k(grid, np.abs(mu_grid), k, cfg.delta)
    return state, cps
