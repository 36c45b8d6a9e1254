"""Experiment configuration with JSON round-tripping."""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from ..active.dacd import DacdConfig
from ..active.loop import ModelConfig, SpectralConfig
from ..benchgen import parse_pattern
from ..errors import InvalidInputError
from ..numerics import KernelKind
from ..spectral import WindowKind

__all__ = ["Mode", "ExperimentConfig", "OUTPUT_DIR_ENV", "default_output_dir", "preset"]

OUTPUT_DIR_ENV = "ALCPD_OUTPUT_DIR"


def default_output_dir() -> str:
    return os.environ.get(OUTPUT_DIR_ENV, "alcpd-out")


class Mode(str, enum.Enum):
    SIMULATE = "simulate"
    REAL_DATA = "real"
    SENSITIVITY = "sensitivity"
    BASELINE = "baseline"


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce a set of runs.

    ``grid`` maps field names to lists of values; a sweep runs the
    Cartesian product. ``delta`` and ``margin`` are in grid steps (one step
    is the median timestamp spacing). ``margin=None`` means ``delta`` and
    ``delta=None`` means ``window``. Without ``k`` or ``b``, runs with a
    known truth pick the ``len(truth)`` strongest peaks and others use the
    ``percentile`` threshold.
    """

    mode: str = Mode.SIMULATE.value
    pattern: str | None = "SP"
    dataset: str | None = None
    truth: str | None = None
    every: int = 1
    columns: list | None = None
    n: int = 100
    cp: int = 50
    sigma: float = 1.0
    kernel: str = "matern52"
    window: int = 15
    window_kind: str = "hann"
    normalization: str = "minmax"
    delta: float | None = None
    margin: float | None = None
    b: float | None = None
    percentile: float = 95.0
    k: int | None = None
    beta: float = 0.5
    init_points: int = 10
    iterations: int = 10
    batch_size: int = 1
    replications: int = 1
    seeds: list | None = None
    seed: int | None = None
    learning_rate: float = 0.1
    depth: int = 2
    num_inducing: int = 20
    init_steps: int = 500
    warm_steps: int = 200
    n_paths: int = 50
    xi: float = 0.01
    jobs: int = 1
    output_dir: str | None = None
    grid: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self):
        try:
            Mode(self.mode)
        except ValueError:
            raise InvalidInputError(f"unknown mode {self.mode!r}; choose from {[m.value for m in Mode]}") from None
        if self.dataset is None:
            if self.pattern is None:
                raise InvalidInputError("need a pattern or a dataset path")
            parse_pattern(self.pattern)
        KernelKind.parse(self.kernel)
        WindowKind.parse(self.window_kind)
        if self.normalization not in ("minmax", "none"):
            raise InvalidInputError("normalization must be 'minmax' or 'none'")
        if not 0.0 <= self.beta <= 1.0:
            raise InvalidInputError(f"beta must lie in [0, 1], got {self.beta}")
        if not 0.0 <= self.learning_rate <= 1.0:
            raise InvalidInputError(f"learning rate must lie in [0, 1], got {self.learning_rate}")
        for name in ("window", "init_points", "batch_size", "replications", "depth", "num_inducing",
                     "init_steps", "warm_steps", "every", "jobs"):
            if getattr(self, name) < 1:
                raise InvalidInputError(f"{name} must be >= 1")
        if self.window < 2:
            raise InvalidInputError("window must be >= 2")
        if self.n_paths < 2:
            raise InvalidInputError("n_paths must be >= 2")
        if self.iterations < 0:
            raise InvalidInputError("iterations must be >= 0")
        if self.k is not None and self.k < 1:
            raise InvalidInputError("k must be >= 1")
        for name in ("delta", "margin"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise InvalidInputError(f"{name} must be positive")
        if self.seeds is not None and len(self.seeds) != self.replications:
            raise InvalidInputError("seeds must list one seed per replication")
        if not isinstance(self.grid, dict):
            raise InvalidInputError("grid must map field names to value lists")
        names = {f.name for f in dataclasses.fields(self)} - {"grid"}
        for key, values in self.grid.items():
            if key not in names:
                raise InvalidInputError(f"unknown grid field {key!r}")
            if not isinstance(values, list) or not values:
                raise InvalidInputError(f"grid field {key!r} needs a non-empty list of values")

    @property
    def resolved_delta(self) -> float:
        return float(self.window if self.delta is None else self.delta)

    @property
    def resolved_margin(self) -> float:
        return float(self.resolved_delta if self.margin is None else self.margin)

    def replication_seeds(self) -> list:
        if self.seeds is not None:
            return [int(s) for s in self.seeds]
        base = 0 if self.seed is None else int(self.seed)
        return [base + r for r in range(self.replications)]

    def model_config(self) -> ModelConfig:
        return ModelConfig(kernel=self.kernel, depth=self.depth, num_inducing=self.num_inducing,
                           learning_rate=self.learning_rate, init_steps=self.init_steps,
                           warm_steps=self.warm_steps, n_paths=self.n_paths)

    def spectral_config(self) -> SpectralConfig:
        return SpectralConfig(window=self.window, window_kind=self.window_kind,
                              normalization=self.normalization)

    def dacd_config(self) -> DacdConfig:
        return DacdConfig(learning_rate=self.learning_rate, init_steps=self.init_steps,
                          warm_steps=self.warm_steps, xi=self.xi, delta=self.resolved_delta,
                          batch_size=self.batch_size)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise InvalidInputError(f"unknown config keys {unknown}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"config is not valid JSON: {exc}") from None
        if not isinstance(d, dict):
            raise InvalidInputError("config must be a JSON object")
        return cls.from_dict(d)

    def save(self, path):
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_json(Path(path).read_text())

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def cell_key(self) -> dict:
        """Settings that identify a sweep cell (no seeds, grid, or I/O)."""
        d = self.to_dict()
        for k in ("seeds", "seed", "replications", "grid", "output_dir", "jobs"):
            d.pop(k)
        return d

    def cell_hash(self) -> str:
        blob = json.dumps(self.cell_key(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


_PRESETS = {
    Mode.SIMULATE: dict(init_points=10, iterations=10, batch_size=1, learning_rate=0.1, window=15),
    Mode.BASELINE: dict(init_points=10, iterations=10, batch_size=1, learning_rate=0.1, window=15),
    Mode.REAL_DATA: dict(init_points=30, iterations=10, batch_size=5, learning_rate=0.01, window=10, delta=10.0),
    Mode.SENSITIVITY: dict(init_points=30, iterations=10, batch_size=5, learning_rate=0.01, window=10, delta=10.0),
}

# window and suppression interval per real dataset
_DATASET_WINDOWS = {"apple": 20, "bee_dance": 20, "occupancy": 10, "run_log": 10, "well_log": 10}


def preset(mode, dataset_name: str | None = None, **overrides) -> ExperimentConfig:
    """Experiment defaults for ``mode`` (and a named real dataset)."""
    mode = Mode(mode)
    d = dict(_PRESETS[mode])
    d["mode"] = mode.value
    if dataset_name is not None:
        key = dataset_name.lower().replace("-", "_").replace(" ", "_")
        if key not in _DATASET_WINDOWS:
            raise InvalidInputError(f"no preset for dataset {dataset_name!r}")
        d["window"] = _DATASET_WINDOWS[key]
        d["delta"] = float(_DATASET_WINDOWS[key])
    d.update(overrides)
    return ExperimentConfig(**d)

