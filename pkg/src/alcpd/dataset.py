"""Ordered time series observations and CSV ingestion."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, ParseError

__all__ = ["TimeSeriesDataset", "load_dataset", "load_truth", "write_series_csv", "write_truth"]

INITIAL = "initial"
QUERIED = "queried"


@dataclass
class TimeSeriesDataset:
    """Observations ``(t, y)`` sorted by ``t``.

    ``y`` has shape ``(n,)`` or ``(n, d)``; ``source`` records for each row
    whether it came from the initial design or an oracle query.
    """

    t: np.ndarray
    y: np.ndarray
    source: list = field(default_factory=list)
    columns: list = field(default_factory=list)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float).reshape(-1)
        self.y = np.asarray(self.y, dtype=float)
        if self.y.ndim == 2 and self.y.shape[1] == 1:
            self.y = self.y[:, 0]
        if self.y.shape[0] != self.t.size:
            raise InvalidInputError(f"t has {self.t.size} rows but y has {self.y.shape[0]}")
        if not self.source:
            self.source = [INITIAL] * self.t.size
        if len(self.source) != self.t.size:
            raise InvalidInputError("source labels must match the number of rows")
        order = np.argsort(self.t, kind="stable")
        if np.any(order != np.arange(order.size)):
            self.t = self.t[order]
            self.y = self.y[order]
            self.source = [self.source[i] for i in order]

    def __len__(self):
        return self.t.size

    @property
    def dims(self) -> int:
        return 1 if self.y.ndim == 1 else self.y.shape[1]

    def column(self, j: int) -> np.ndarray:
        if self.y.ndim == 1:
            if j != 0:
                raise IndexError(j)
            return self.y
        return self.y[:, j]

    def append(self, t, y, source=QUERIED) -> "TimeSeriesDataset":
        """New dataset with extra rows; the receiver is left untouched."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        y = np.asarray(y, dtype=float)
        if self.y.ndim == 1:
            y = y.reshape(-1)
        else:
            y = y.reshape(-1, self.y.shape[1])
        return TimeSeriesDataset(
            np.concatenate([self.t, t]),
            np.concatenate([self.y, y]),
            self.source + [source] * t.size,
            list(self.columns),
        )

    def subset(self, idx) -> "TimeSeriesDataset":
        idx = np.asarray(idx, dtype=int)
        return TimeSeriesDataset(self.t[idx], self.y[idx], [self.source[i] for i in idx], list(self.columns))


def load_dataset(path, every: int = 1, columns=None) -> TimeSeriesDataset:
    """Read a CSV whose first column is a strictly increasing timestamp.

    Args:
        path: CSV file with a header row.
        every: keep rows ``0, every, 2*every, ...`` (downsampling).
        columns: optional subset of value column names to keep.

    Raises:
        ParseError: ragged rows, non-numeric cells or non-increasing time,
            with the offending line number.
    """
    if every < 1:
        raise InvalidInputError("--every must be >= 1")
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", line=1) from None
        if len(header) < 2:
            raise ParseError("need a time column and at least one value column", line=1)
        rows_t, rows_y = [], []
        prev = -np.inf
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", line=lineno)
            try:
                vals = [float(c) for c in row]
            except ValueError as exc:
                raise ParseError(f"non-numeric field ({exc})", line=lineno) from None
            if not vals[0] > prev:
                raise ParseError(f"timestamp {row[0]} is not strictly increasing", line=lineno)
            prev = vals[0]
            rows_t.append(vals[0])
            rows_y.append(vals[1:])
    if not rows_t:
        raise ParseError("no data rows", line=2)
    names = header[1:]
    y = np.asarray(rows_y, dtype=float)
    if columns:
        missing = [c for c in columns if c not in names]
        if missing:
            raise InvalidInputError(f"unknown columns {missing}")
        keep = [names.index(c) for c in columns]
        y = y[:, keep]
        names = list(columns)
    t = np.asarray(rows_t)[::every]
    y = y[::every]
    return TimeSeriesDataset(t, y, columns=names)


def load_truth(path) -> list[float]:
    """Change point locations, one per line (blank lines and '#' ignored)."""
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            out.append(float(line))
        except ValueError:
            raise ParseError(f"bad change point {line!r}", line=lineno) from None
    return out


def _fmt(v: float) -> str:
    v = float(v)
    return str(int(v)) if v.is_integer() and abs(v) < 1e15 else repr(v)


def write_series_csv(path, dataset: TimeSeriesDataset, names=None):
    y = dataset.y.reshape(len(dataset), -1)
    names = names or dataset.columns or (["y"] if y.shape[1] == 1 else [f"y{j}" for j in range(y.shape[1])])
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", *names])
        for ti, row in zip(dataset.t, y):
            w.writerow([_fmt(ti), *(repr(float(v)) for v in row)])


def write_truth(path, locations):
    Path(path).write_text("".join(f"{_fmt(x)}\n" for x in locations))
