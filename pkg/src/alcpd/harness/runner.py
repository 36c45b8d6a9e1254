"""Replications and parameter sweeps."""

from __future__ import annotations

import itertools
import logging
import time
import traceback
import warnings
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..active.dacd import dacd_baseline
from ..active.loop import _derive_seed, detect_changes, run_al_loop
from ..active.oracle import DatasetOracle, SyntheticOracle
from ..benchgen import PatternSpec
from ..dataset import load_dataset, load_truth
from ..detect import ChangePointSet, evaluate
from ..errors import AlcpdError, InvalidInputError, NumericalFailure
from .config import ExperimentConfig, Mode

__all__ = ["RunRecord", "truth_sidecar", "run_replication", "expand_grid", "run_sweep"]

log = logging.getLogger(__name__)


@dataclass
class RunRecord:
    """Outcome of one replication of one sweep cell."""

    config: dict
    cell: str
    replication: int
    seed: int
    status: str = "ok"
    error: str | None = None
    truth: list = field(default_factory=list)
    detected: list = field(default_factory=list)
    scores: list = field(default_factory=list)
    rmse: float | None = None
    f1: float | None = None
    precision: float | None = None
    recall: float | None = None
    margin: float | None = None
    selected: list = field(default_factory=list)  # per iteration
    elbo: list = field(default_factory=list)      # final ELBO per fit, per dimension
    series: dict = field(default_factory=dict)    # t, y, source of the sampled points
    profiles: list = field(default_factory=list)  # per iteration: candidates, scdm, su
    wall_time: float = 0.0

    def to_json_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "profiles"}


def truth_sidecar(path) -> Path:
    """``data.csv`` -> ``data.truth.csv``."""
    p = Path(path)
    return p.with_name(p.stem + ".truth" + p.suffix)


def _grid_step(t) -> float:
    t = np.asarray(t, dtype=float)
    return float(np.median(np.diff(t))) if t.size > 1 else 1.0


def _oracle(cfg: ExperimentConfig, seed: int):
    if cfg.dataset is None:
        spec = PatternSpec(kind=cfg.pattern, n=cfg.n, cp=cfg.cp, sigma=cfg.sigma, seed=seed)
        return SyntheticOracle(spec)
    data = load_dataset(cfg.dataset, every=cfg.every, columns=cfg.columns)
    truth_path = Path(cfg.truth) if cfg.truth else truth_sidecar(cfg.dataset)
    truth = load_truth(truth_path) if truth_path.exists() else None
    return DatasetOracle(data, truth=truth)


def _floats(a) -> list:
    return [float(v) for v in np.asarray(a, dtype=float).reshape(-1)]


def _detect_kwargs(cfg: ExperimentConfig, truth, step: float) -> dict:
    kw = {"delta": cfg.resolved_delta * step}
    if cfg.k is not None:
        kw["k"] = cfg.k
    elif cfg.b is not None:
        kw["b"] = cfg.b
    elif truth is not None and len(truth) > 0:
        kw["k"] = len(truth)
    else:
        kw["percentile"] = cfg.percentile
    return kw


def run_replication(cfg: ExperimentConfig, replication: int = 0, seed: int | None = None) -> RunRecord:
    """Run one replication; failures are captured in the record."""
    if seed is None:
        seed = cfg.replication_seeds()[replication]
    rec = RunRecord(cfg.to_dict(), cfg.cell_hash(), replication, int(seed))
    start = time.perf_counter()
    try:
        _run_into(rec, cfg, int(seed))
    except (AlcpdError, ArithmeticError, np.linalg.LinAlgError, RuntimeError, OSError) as exc:
        rec.status = "numerical_failure" if isinstance(exc, (NumericalFailure, ArithmeticError,
                                                              np.linalg.LinAlgError)) else "failed"
        rec.error = f"{type(exc).__name__}: {exc}"
        log.warning("cell %s rep %d failed: %s", rec.cell, replication, rec.error)
        log.debug("%s", traceback.format_exc())
    rec.wall_time = time.perf_counter() - start
    return rec


def _run_into(rec: RunRecord, cfg: ExperimentConfig, seed: int):
    oracle = _oracle(cfg, seed)
    truth = None if oracle.truth is None else _floats(oracle.truth)
    step = _grid_step(oracle.grid)
    # the model seed depends on the cell so cells differ only where intended
    model_seed = _derive_seed(seed, zlib.crc32(rec.cell.encode()))
    kw = _detect_kwargs(cfg, truth, step)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        if Mode(cfg.mode) is Mode.BASELINE:
            dcfg = cfg.dacd_config()
            dcfg.delta = kw["delta"]
            state, cps = dacd_baseline(oracle, cfg.init_points, cfg.iterations,
                                       kw.get("k", 1), dcfg, seed=model_seed)
            rec.selected = [list(h["selected"]) for h in state.history]
        else:
            state = run_al_loop(oracle, cfg.init_points, cfg.iterations, cfg.batch_size, cfg.beta,
                                cfg.model_config(), cfg.spectral_config(), seed=model_seed)
            cps, final = detect_changes(state, cfg.spectral_config(), cfg.model_config(), **kw)
            rec.selected = [list(h.selected) for h in state.history]
            rec.elbo = [list(h.elbo) for h in state.history]
            rec.profiles = [_profile_dict(h.profile) for h in state.history]
            rec.profiles.append(_profile_dict(final))
    ds = state.dataset
    rec.series = {"t": _floats(ds.t), "y": ds.y.tolist(), "source": list(ds.source)}
    rec.detected = _floats(cps.locations)
    rec.scores = _floats(cps.scores)
    if truth is not None:
        rec.truth = truth
        rec.margin = cfg.resolved_margin * step
        res = evaluate(rec.detected, truth, rec.margin)
        rec.rmse, rec.f1, rec.precision, rec.recall = res.rmse, res.f1, res.precision, res.recall


def _profile_dict(p) -> dict:
    return {"location": _floats(p.candidates), "scdm": _floats(p.scdm), "su": _floats(p.su)}


def expand_grid(cfg: ExperimentConfig) -> list:
    """One config per cell of the Cartesian product of ``cfg.grid``."""
    if not cfg.grid:
        raise InvalidInputError("empty sweep grid")
    keys = list(cfg.grid)
    cells = []
    for values in itertools.product(*(cfg.grid[k] for k in keys)):
        cells.append(cfg.replace(grid={}, **dict(zip(keys, values))))
    return cells


def _job(args):
    cell, rep, seed = args
    return run_replication(cell, rep, seed)


def run_sweep(cfg: ExperimentConfig, jobs: int | None = None) -> list:
    """All replications of all grid cells, in grid order then replication order.

    A failing cell is recorded with its error status and the sweep moves on.
    """
    cells = expand_grid(cfg)
    tasks = [(cell, r, s) for cell in cells for r, s in enumerate(cell.replication_seeds())]
    jobs = jobs or cfg.jobs
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_job, tasks))
    return [_job(t) for t in tasks]
