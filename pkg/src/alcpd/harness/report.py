"""Deterministic result files: summary tables, run log, plot data."""

from __future__ import annotations

import csv
import json
import math
from collections import OrderedDict
from pathlib import Path

import numpy as np

from ..numerics import KernelKind
from .runner import RunRecord

__all__ = ["summarize", "emit_report", "SUMMARY_FIELDS"]

SUMMARY_FIELDS = [
    "cell", "mode", "source", "kernel", "window", "delta", "beta", "init_points", "iterations",
    "batch_size", "replications", "ok", "rmse_n", "rmse_mean", "rmse_std", "f1_mean", "f1_std",
]


def _stats(values):
    v = [x for x in values if x is not None]
    if not v:
        return len(v), None, None
    a = np.asarray(v, dtype=float)
    return len(v), float(a.mean()), float(a.std())  # population std over replications


def summarize(records) -> list:
    """One row per cell, in order of first appearance."""
    groups: OrderedDict = OrderedDict()
    for rec in records:
        groups.setdefault(rec.cell, []).append(rec)
    rows = []
    for cell, recs in groups.items():
        c = recs[0].config
        ok = [r for r in recs if r.status == "ok"]
        n_rmse, rm, rs = _stats([r.rmse for r in ok])
        _, fm, fs = _stats([r.f1 for r in ok])
        rows.append({
            "cell": cell, "mode": c["mode"], "source": c["dataset"] or c["pattern"],
            "kernel": c["kernel"], "window": c["window"],
            "delta": c["window"] if c["delta"] is None else c["delta"], "beta": c["beta"],
            "init_points": c["init_points"], "iterations": c["iterations"],
            "batch_size": c["batch_size"], "replications": len(recs), "ok": len(ok),
            "rmse_n": n_rmse, "rmse_mean": rm, "rmse_std": rs, "f1_mean": fm, "f1_std": fs,
        })
    return rows


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        return repr(v)
    return str(v)


def _write_csv(path: Path, header, rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def _table(rows) -> tuple:
    """Pivot: one row per source, one column per (kernel, window, beta)."""
    metric = "rmse_mean" if any(r["rmse_mean"] is not None for r in rows) else "f1_mean"
    cols = []
    table: OrderedDict = OrderedDict()
    for r in rows:
        label = f"{KernelKind.parse(r['kernel']).value}-{r['window']} beta={r['beta']}"
        if r["mode"] == "baseline":
            label = f"dacd-{label}"
        if label not in cols:
            cols.append(label)
        table.setdefault(r["source"], {})[label] = r[metric]
    body = [[src] + [vals.get(c) for c in cols] for src, vals in table.items()]
    return [f"source ({metric})"] + cols, body


def _run_dir(out: Path, rec: RunRecord) -> Path:
    return out / "runs" / f"{rec.cell}-r{rec.replication}"


def _emit_plot_data(out: Path, rec: RunRecord):
    d = _run_dir(out, rec)
    d.mkdir(parents=True, exist_ok=True)
    s = rec.series
    if s:
        picked = {float(x): i + 1 for i, batch in enumerate(rec.selected) for x in batch}
        ys = [y if isinstance(y, list) else [y] for y in s["y"]]
        ncol = len(ys[0]) if ys else 1
        header = ["t"] + (["y"] if ncol == 1 else [f"y{j}" for j in range(ncol)]) + ["source", "iteration"]
        rows = [[t, *y, src, picked.get(float(t), 0)] for t, y, src in zip(s["t"], ys, s["source"])]
        _write_csv(d / "series.csv", header, rows)
    _write_csv(d / "detected.csv", ["location", "score"], zip(rec.detected, rec.scores))
    for k, p in enumerate(rec.profiles, start=1):
        name = "profile_final.csv" if k == len(rec.profiles) else f"profile_iter{k}.csv"
        _write_csv(d / name, ["location", "scdm", "su"], zip(p["location"], p["scdm"], p["su"]))


def emit_report(records, out_dir) -> list:
    """Write ``summary.csv``, ``table.csv``, ``runs.jsonl`` and per-run plot data.

    Output depends only on the records, so re-emitting identical records
    gives byte-identical files. Wall time is kept out of the summaries.

    Returns:
        The written paths, sorted.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = summarize(records)
    _write_csv(out / "summary.csv", SUMMARY_FIELDS, ([r[f] for f in SUMMARY_FIELDS] for r in rows))
    header, body = _table(rows)
    _write_csv(out / "table.csv", header, body)
    with (out / "runs.jsonl").open("w") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json_dict(), sort_keys=True, allow_nan=True) + "\n")
    for rec in records:
        if rec.status == "ok":
            _emit_plot_data(out, rec)
    return sorted(str(p) for p in out.rglob("*") if p.is_file())
