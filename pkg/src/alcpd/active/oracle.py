"""Oracles answer (costly) queries for the response at a location."""

from __future__ import annotations

import numpy as np

from ..benchgen import PatternSpec, generate
from ..dataset import TimeSeriesDataset
from ..errors import BudgetExhausted, InvalidInputError

__all__ = ["Oracle", "DatasetOracle", "SyntheticOracle"]


class Oracle:
    """Base interface: ``query(x) -> y`` with a query budget.

    Subclasses provide ``grid`` (the locations that may be queried) and
    ``_answer``.
    """

    grid: np.ndarray

    def __init__(self, budget: int | None = None):
        self.budget = budget
        self.queries = 0

    @property
    def remaining(self):
        return None if self.budget is None else self.budget - self.queries

    def query(self, x):
        if self.budget is not None and self.queries >= self.budget:
            raise BudgetExhausted(f"oracle budget of {self.budget} queries exhausted")
        self.queries += 1
        return self._answer(float(x))

    def _answer(self, x):
        raise NotImplementedError


class DatasetOracle(Oracle):
    """Answers with the recorded value at the nearest timestamp.

    Ties between two equally near timestamps go to the smaller one.
    """

    def __init__(self, dataset: TimeSeriesDataset, budget: int | None = None, truth=None):
        super().__init__(budget)
        if len(dataset) == 0:
            raise InvalidInputError("DatasetOracle needs a non-empty dataset")
        self.dataset = dataset
        self.grid = dataset.t.copy()
        self.truth = None if truth is None else np.asarray(truth, dtype=float)

    @property
    def dims(self):
        return self.dataset.dims

    def nearest_index(self, x: float) -> int:
        t = self.grid
        j = int(np.searchsorted(t, x))
        if j == 0:
            return 0
        if j == t.size:
            return t.size - 1
        return j - 1 if x - t[j - 1] <= t[j] - x else j

    def _answer(self, x):
        i = self.nearest_index(x)
        y = self.dataset.y[i]
        return float(y) if np.ndim(y) == 0 else np.array(y, dtype=float)


class SyntheticOracle(DatasetOracle):
    """Oracle over a generated benchmark series (one noise draw per t)."""

    def __init__(self, spec: PatternSpec, budget: int | None = None):
        data, truth = generate(spec)
        super().__init__(data, budget, truth.locations)
        self.spec = spec
