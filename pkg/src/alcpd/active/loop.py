"""The active learning loop: fit, profile, acquire, query, refit."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from ..dataset import INITIAL, QUERIED, TimeSeriesDataset
from ..detect import ChangePointSet, detect_threshold, detect_top_k, percentile_threshold
from ..dgp import DgpModel, TrainConfig, grow_inducing, predict_mean, sample_paths, train, white_noise_test
from ..errors import BudgetExhausted, DegenerateInputError, ExhaustedCandidatesError, InvalidInputError
from ..numerics import RngStream
from ..spectral import SpectralProfile, WindowKind, scdm_profile, spectral_uncertainty
from .acquisition import Normalization, acquisition_values, minmax, select_batch
from .oracle import Oracle

__all__ = [
    "ModelConfig",
    "SpectralConfig",
    "IterationRecord",
    "AlState",
    "initial_design",
    "fit_models",
    "compute_profile",
    "run_al_loop",
    "detect_changes",
]

log = logging.getLogger(__name__)


@dataclass
class ModelConfig:
    kernel: str = "matern52"
    depth: int = 2
    num_inducing: int = 20
    learning_rate: float = 0.1
    init_steps: int = 500
    warm_steps: int = 200
    mc_samples_elbo: int = 5
    n_paths: int = 50        # S, paths for spectral uncertainty
    n_pred: int = 100        # paths averaged for the predictive mean
    lengthscale: float = 0.2
    noise_variance: float = 0.1
    inner_variance: float = 0.1
    white_noise_alpha: float = 0.05
    white_noise_lags: int | None = None


@dataclass
class SpectralConfig:
    window: int = 15
    window_kind: str = "hann"
    normalization: str = "minmax"
    min_spacing: float | None = None   # default window / 2
    segment_length: int | None = None  # default window
    densify: int = 1

    @property
    def spacing(self) -> float:
        return self.window / 2.0 if self.min_spacing is None else float(self.min_spacing)


@dataclass
class IterationRecord:
    iteration: int
    selected: list
    af_selected: list
    profile: SpectralProfile
    elbo: list
    white_noise: list = field(default_factory=list)


@dataclass
class AlState:
    dataset: TimeSeriesDataset
    models: list
    history: list = field(default_factory=list)
    grid: np.ndarray = None
    partial: bool = False
    elbo_traces: list = field(default_factory=list)
    white_noise: list = field(default_factory=list)

    @property
    def model(self) -> DgpModel:
        return self.models[0]

    @property
    def selected(self) -> np.ndarray:
        return np.array([x for rec in self.history for x in rec.selected])


def _derive_seed(seed: int, *keys: int) -> int:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def initial_design(grid, n: int) -> np.ndarray:
    """``n`` evenly spaced grid locations, endpoints included."""
    grid = np.asarray(grid, dtype=float)
    if n < 1:
        raise InvalidInputError("need at least one initial point")
    if n >= grid.size:
        return grid.copy()
    idx = np.unique(np.round(np.linspace(0, grid.size - 1, n)).astype(int))
    return grid[idx]


def _wn_lags(n: int, cfg: ModelConfig) -> int:
    if cfg.white_noise_lags is not None:
        return min(cfg.white_noise_lags, n - 1)
    return max(1, min(10, n // 5))


def _fit_one(model, data, cfg: ModelConfig, steps: int, seed: int):
    tc = TrainConfig(learning_rate=cfg.learning_rate, steps=steps,
                     mc_samples_elbo=cfg.mc_samples_elbo, seed=seed)
    model, trace = train(model, data, tc)
    traces = [trace]
    wn = None
    if len(data) > 2:
        resid = data.y - predict_mean(model, data.t, cfg.n_pred, seed)
        try:
            wn = white_noise_test(resid, _wn_lags(len(data), cfg), cfg.white_noise_alpha)
        except DegenerateInputError:
            wn = None
        if wn is not None and not wn[2]:
            warnings.warn(f"DGP residuals fail the white noise test (p={wn[1]:.3g}); "
                          "training one extra round", RuntimeWarning, stacklevel=3)
            tc2 = TrainConfig(learning_rate=cfg.learning_rate, steps=2 * steps,
                              mc_samples_elbo=cfg.mc_samples_elbo, seed=seed + 1)
            model, trace2 = train(model, data, tc2)
            traces.append(trace2)
            resid = data.y - predict_mean(model, data.t, cfg.n_pred, seed)
            wn = white_noise_test(resid, _wn_lags(len(data), cfg), cfg.white_noise_alpha)
    return model, np.concatenate(traces), wn


def fit_models(dataset: TimeSeriesDataset, cfg: ModelConfig, seed: int, input_range,
               models=None, new_t=None, steps=None):
    """Train one DGP per output dimension (fresh or warm-started).

    Returns ``(models, traces, white_noise_results)``.
    """
    out, traces, wns = [], [], []
    for d in range(dataset.dims):
        col = TimeSeriesDataset(dataset.t, dataset.column(d), list(dataset.source))
        if models is None:
            model = DgpModel.initialize(col.t, col.y, cfg.kernel, cfg.depth, cfg.num_inducing,
                                        input_range, cfg.noise_variance, cfg.lengthscale,
                                        inner_variance=cfg.inner_variance)
            n_steps = steps or cfg.init_steps
        else:
            model = grow_inducing(models[d], new_t) if new_t is not None else models[d]
            n_steps = steps or cfg.warm_steps
        model, trace, wn = _fit_one(model, col, cfg, n_steps, _derive_seed(seed, d, len(dataset)))
        out.append(model)
        traces.append(trace)
        wns.append(wn)
    return out, traces, wns


def _eval_grid(grid, densify: int):
    if densify <= 1:
        return np.asarray(grid, dtype=float)
    g = np.asarray(grid, dtype=float)
    pos = np.arange((g.size - 1) * densify + 1) / densify
    return np.interp(pos, np.arange(g.size), g)


def compute_profile(models, grid, cand_idx, spectral: SpectralConfig, cfg: ModelConfig,
                    rng: RngStream, pred_seed: int = 0, with_su: bool = True):
    """SCDM / SU profile at grid indices ``cand_idx``, fused across dimensions.

    For several dimensions each dimension's SCDM and SU are MinMax-normalized
    (when normalization is enabled) and then averaged.
    """
    r = max(1, int(spectral.densify))
    eg = _eval_grid(grid, r)
    A = spectral.window * r
    seg = None if spectral.segment_length is None else spectral.segment_length * r
    idx = np.asarray(cand_idx, dtype=int) * r
    scdms, sus = [], []
    for model in models:
        mean = predict_mean(model, eg, cfg.n_pred, pred_seed)
        scdms.append(scdm_profile(mean, idx, A, spectral.window_kind, seg))
        if with_su:
            paths = sample_paths(model, eg, cfg.n_paths, rng)
            sus.append(spectral_uncertainty(paths, idx, A, spectral.window_kind))
        else:
            sus.append(np.zeros(idx.size))
    if len(models) > 1 and Normalization(spectral.normalization) is Normalization.MINMAX:
        scdms = [minmax(v) for v in scdms]
        sus = [minmax(v) for v in sus]
    loc = np.asarray(grid, dtype=float)[np.asarray(cand_idx, dtype=int)]
    return SpectralProfile(loc, np.mean(scdms, axis=0), np.mean(sus, axis=0))


def run_al_loop(oracle: Oracle, init_points: int = 10, iterations: int = 10, batch_size: int = 1,
                beta: float = 0.5, model_cfg: ModelConfig | None = None,
                spectral_cfg: SpectralConfig | None = None, seed: int = 0) -> AlState:
    """Active learning for change point detection against ``oracle``.

    Queries an evenly spaced initial design, trains the DGP, then for each
    iteration profiles SCDM and spectral uncertainty over the unsampled
    grid, selects a batch by the acquisition function, queries it and
    warm-starts training. Stops early (``state.partial``) if the oracle
    budget runs out or no candidates remain.
    """
    model_cfg = model_cfg or ModelConfig()
    spectral_cfg = spectral_cfg or SpectralConfig()
    grid = np.asarray(oracle.grid, dtype=float)
    if oracle.remaining is not None and oracle.remaining < init_points:
        raise BudgetExhausted("oracle budget is smaller than the initial design")
    x0 = initial_design(grid, init_points)
    y0 = [oracle.query(x) for x in x0]
    dataset = TimeSeriesDataset(x0, np.array(y0), [INITIAL] * len(x0))
    input_range = (float(grid[0]), float(grid[-1]))
    models, traces, wns = fit_models(dataset, model_cfg, seed, input_range)
    state = AlState(dataset, models, grid=grid, elbo_traces=[traces], white_noise=[wns])
    rng = RngStream(seed).spawn(1)
    sampled = set(np.searchsorted(grid, dataset.t).tolist())
    for it in range(1, iterations + 1):
        cand_idx = np.array([i for i in range(grid.size) if i not in sampled], dtype=int)
        if cand_idx.size == 0:
            state.partial = True
            break
        profile = compute_profile(state.models, grid, cand_idx, spectral_cfg, model_cfg,
                                  rng, _derive_seed(seed, 2, it))
        af = acquisition_values(profile, beta, spectral_cfg.normalization)
        try:
            chosen = select_batch(af, profile.candidates, batch_size, spectral_cfg.spacing)
        except ExhaustedCandidatesError:
            state.partial = True
            break
        new_t, new_y, af_sel = [], [], []
        for x in chosen:
            try:
                new_y.append(oracle.query(x))
            except BudgetExhausted:
                state.partial = True
                break
            new_t.append(float(x))
            af_sel.append(float(af[np.searchsorted(profile.candidates, x)]))
        if not new_t:
            break
        state.dataset = state.dataset.append(new_t, np.array(new_y), QUERIED)
        sampled.update(np.searchsorted(grid, new_t).tolist())
        state.models, traces, wns = fit_models(state.dataset, model_cfg, seed, input_range,
                                               models=state.models, new_t=np.array(new_t))
        state.elbo_traces.append(traces)
        state.white_noise.append(wns)
        state.history.append(IterationRecord(it, new_t, af_sel, profile,
                                             [float(tr[-1]) for tr in traces], wns))
        if state.partial:
            break
    return state


def detect_changes(state: AlState, spectral_cfg: SpectralConfig | None = None,
                   model_cfg: ModelConfig | None = None, k: int | None = None,
                   b: float | None = None, percentile: float = 95.0,
                   delta: float | None = None) -> tuple:
    """Change points from the final model's SCDM profile over the full grid.

    With ``k`` the ``k`` strongest separated peaks are returned; otherwise
    Algorithm-1 thresholding with ``b`` (or the given percentile of the
    profile). ``delta`` defaults to the window size.

    Returns:
        ``(ChangePointSet, SpectralProfile)``.
    """
    spectral_cfg = spectral_cfg or SpectralConfig()
    model_cfg = model_cfg or ModelConfig()
    grid = state.grid
    idx = np.arange(grid.size)
    profile = compute_profile(state.models, grid, idx, spectral_cfg, model_cfg,
                              RngStream(0), with_su=False)
    delta = float(spectral_cfg.window if delta is None else delta)
    seg = spectral_cfg.segment_length or spectral_cfg.window
    valid = (idx - seg >= 0) & (idx + seg <= grid.size)
    loc, val = profile.candidates[valid], profile.scdm[valid]
    if k is not None:
        cps = detect_top_k(loc, val, k, delta)
    else:
        if b is None:
            b = percentile_threshold(val, percentile)
        cps = detect_threshold(loc, val, b, delta)
    return cps, profile
