"""Command line entry point: ``alcpd <command> [options]``.

Exit codes: 0 success, 2 invalid input or usage, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from ..active.loop import ModelConfig, SpectralConfig, compute_profile, fit_models
from ..benchgen import PatternSpec, generate
from ..dataset import load_dataset, load_truth, write_series_csv, write_truth
from ..detect import detect_threshold, detect_top_k, evaluate, percentile_threshold
from ..dgp import model_from_dict, model_to_dict
from ..errors import InvalidInputError, NumericalFailure
from ..numerics import RngStream
from .config import ExperimentConfig, Mode, default_output_dir
from .report import emit_report, summarize
from .runner import run_replication, run_sweep, truth_sidecar

__all__ = ["main", "build_parser"]

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 2, 3

log = logging.getLogger("alcpd")


class _UsageError(Exception):
    pass


def _experiment_flags(p: argparse.ArgumentParser, multi: tuple = ()):
    """Flags mirroring ExperimentConfig; names in ``multi`` accept several values."""

    def add(flag, dest, type_, help_):
        if dest in multi:
            p.add_argument(flag, dest=dest, type=type_, nargs="+", help=help_ + " (several values sweep)")
        else:
            p.add_argument(flag, dest=dest, type=type_, help=help_)

    p.add_argument("--config", help="JSON experiment config; flags override its values")
    add("--pattern", "pattern", str, "benchmark pattern, e.g. SP or TP-SP")
    p.add_argument("--data", dest="dataset", help="CSV dataset (first column is time)")
    p.add_argument("--truth", help="truth file, one change point per line")
    p.add_argument("--every", type=int, help="keep every k-th row of the dataset")
    p.add_argument("--columns", nargs="+", help="value columns to use")
    p.add_argument("--n", type=int, help="synthetic series length")
    p.add_argument("--cp", type=int, help="synthetic change point location")
    add("--kernel", "kernel", str, "rbf or matern")
    add("--window", "window", int, "STFT window size A")
    p.add_argument("--window-kind", dest="window_kind", help="hann or rectangular")
    p.add_argument("--normalization", help="minmax or none")
    add("--delta", "delta", float, "suppression interval in grid steps")
    p.add_argument("--margin", type=float, help="F1 matching margin in grid steps (default delta)")
    p.add_argument("-b", "--threshold", dest="b", type=float, help="detection threshold b")
    p.add_argument("--percentile", type=float, help="threshold percentile when b is not given")
    p.add_argument("--k", type=int, help="report the k strongest peaks instead of thresholding")
    add("--beta", "beta", float, "exploration/exploitation weight")
    p.add_argument("--init-points", dest="init_points", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--reps", dest="replications", type=int, help="replications per cell")
    p.add_argument("--seeds", type=int, nargs="+", help="explicit seed per replication")
    p.add_argument("--seed", type=int, help="base seed (replication r uses seed + r)")
    p.add_argument("--lr", dest="learning_rate", type=float)
    p.add_argument("--depth", type=int, help="DGP depth")
    p.add_argument("--inducing", dest="num_inducing", type=int)
    p.add_argument("--init-steps", dest="init_steps", type=int)
    p.add_argument("--warm-steps", dest="warm_steps", type=int)
    p.add_argument("--paths", dest="n_paths", type=int, help="MC paths S for spectral uncertainty")
    p.add_argument("--xi", type=float, help="EI exploration offset (DACD)")
    p.add_argument("--jobs", type=int, help="parallel worker processes")
    p.add_argument("-o", "--out", dest="output_dir", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="alcpd", description="Active learning change point detection")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic benchmark series and its truth file")
    g.add_argument("--pattern", required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("-o", "--out", required=True, help="output CSV; truth goes to <stem>.truth.csv")
    g.add_argument("--n", type=int, default=100)
    g.add_argument("--cp", type=int, default=50)
    g.add_argument("--mu", type=float, default=0.0)
    g.add_argument("--sigma", type=float, default=1.0)
    g.add_argument("--continuous-trend", action="store_true")

    f = sub.add_parser("fit", help="train a DGP per column and save a checkpoint")
    _data_flags(f)
    f.add_argument("--steps", type=int, default=500)
    f.add_argument("-o", "--out", required=True, help="checkpoint JSON")

    pr = sub.add_parser("profile", help="SCDM and spectral uncertainty profile CSV")
    _data_flags(pr)
    pr.add_argument("--checkpoint", help="use a saved model instead of fitting")
    pr.add_argument("--steps", type=int, default=500)
    pr.add_argument("--window", type=int, default=15)
    pr.add_argument("--window-kind", default="hann")
    pr.add_argument("--paths", type=int, default=50)
    pr.add_argument("-o", "--out", required=True, help="profile CSV")

    d = sub.add_parser("detect", help="threshold-and-suppress on a profile CSV")
    d.add_argument("--profile", required=True, help="CSV with location and scdm columns")
    d.add_argument("--column", default="scdm")
    d.add_argument("--delta", type=float, required=True, help="suppression interval (location units)")
    grp = d.add_mutually_exclusive_group()
    grp.add_argument("-b", "--threshold", type=float)
    grp.add_argument("--percentile", type=float)
    grp.add_argument("--k", type=int)
    d.add_argument("-o", "--out", help="write change points CSV")

    e = sub.add_parser("evaluate", help="RMSE and F1 of predictions against truth")
    e.add_argument("--pred", required=True, help="comma separated locations or a file")
    e.add_argument("--truth", required=True, help="comma separated locations or a file")
    e.add_argument("--margin", type=float, required=True)

    for name, help_, multi in (
        ("al-run", "one active learning run (or several replications)", ()),
        ("bench", "benchmark sweep over beta, kernel and window", ("pattern", "kernel", "window", "beta")),
        ("sensitivity", "window and suppression interval grid", ("window", "delta")),
        ("baseline-dacd", "derivative EI baseline", ("pattern",)),
    ):
        _experiment_flags(sub.add_parser(name, help=help_), multi)
    return parser


def _data_flags(p):
    p.add_argument("--data", required=True)
    p.add_argument("--every", type=int, default=1)
    p.add_argument("--columns", nargs="+")
    p.add_argument("--seed", type=int)
    p.add_argument("--kernel", default="matern52")
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--inducing", type=int, default=20)
    p.add_argument("--lr", type=float, default=0.1)


def _require_seed(seed):
    if seed is None:
        raise _UsageError("--seed is required for this command")


def _locations(text: str) -> list:
    p = Path(text)
    if p.is_file():
        return load_truth(p)
    try:
        return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError:
        raise InvalidInputError(f"cannot parse locations {text!r}") from None


def _cmd_generate(a):
    _require_seed(a.seed)
    spec = PatternSpec(kind=a.pattern, mu=a.mu, sigma=a.sigma, n=a.n, cp=a.cp, seed=a.seed,
                       continuous_trend=a.continuous_trend)
    data, truth = generate(spec)
    write_series_csv(a.out, data)
    side = truth_sidecar(a.out)
    write_truth(side, truth.locations)
    print(f"wrote {a.out} ({len(data)} rows) and {side}")
    return EXIT_OK


def _fit(a, data):
    cfg = ModelConfig(kernel=a.kernel, depth=a.depth, num_inducing=a.inducing, learning_rate=a.lr,
                      init_steps=a.steps)
    input_range = (float(data.t[0]), float(data.t[-1]))
    models, traces, _ = fit_models(data, cfg, a.seed, input_range)
    return models, traces, cfg


def _cmd_fit(a):
    _require_seed(a.seed)
    data = load_dataset(a.data, every=a.every, columns=a.columns)
    models, traces, _ = _fit(a, data)
    bundle = {"models": [model_to_dict(m) for m in models], "columns": list(data.columns),
              "seed": a.seed, "final_elbo": [float(tr[-1]) for tr in traces]}
    Path(a.out).write_text(json.dumps(bundle, indent=1, sort_keys=True) + "\n")
    for name, tr in zip(data.columns, traces):
        print(f"{name}: final ELBO {tr[-1]:.6g} after {tr.size} steps")
    return EXIT_OK


def _cmd_profile(a):
    _require_seed(a.seed)
    data = load_dataset(a.data, every=a.every, columns=a.columns)
    if a.checkpoint:
        bundle = json.loads(Path(a.checkpoint).read_text())
        models = [model_from_dict(m) for m in bundle.get("models", [bundle])]
        cfg = ModelConfig(n_paths=a.paths)
    else:
        models, _, cfg = _fit(a, data)
        cfg.n_paths = a.paths
    spectral = SpectralConfig(window=a.window, window_kind=a.window_kind)
    prof = compute_profile(models, data.t, np.arange(len(data)), spectral, cfg,
                           RngStream(a.seed).spawn(1), pred_seed=a.seed)
    prof.to_csv(a.out)
    print(f"wrote {a.out} ({prof.candidates.size} locations)")
    return EXIT_OK


def _read_profile(path, column):
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "location" not in rows[0] or column not in rows[0]:
        raise InvalidInputError(f"profile needs 'location' and '{column}' columns")
    try:
        return (np.array([float(r["location"]) for r in rows]),
                np.array([float(r[column]) for r in rows]))
    except ValueError as exc:
        raise InvalidInputError(f"bad profile value: {exc}") from None


def _cmd_detect(a):
    loc, val = _read_profile(a.profile, a.column)
    if a.k is not None:
        cps = detect_top_k(loc, val, a.k, a.delta)
    else:
        b = a.threshold if a.threshold is not None else percentile_threshold(
            val, 95.0 if a.percentile is None else a.percentile)
        cps = detect_threshold(loc, val, b, a.delta)
    print(cps.report())
    if a.out:
        cps.to_csv(a.out)
    return EXIT_OK


def _cmd_evaluate(a):
    res = evaluate(_locations(a.pred), _locations(a.truth), a.margin)
    print(res.report(), end="")
    return EXIT_OK


def _experiment_config(a, mode: Mode) -> ExperimentConfig:
    base = ExperimentConfig.load(a.config).to_dict() if a.config else {}
    base["mode"] = mode.value
    grid = dict(base.get("grid") or {})
    skip = {"config", "command", "verbose"}
    for key, value in vars(a).items():
        if key in skip or value is None:
            continue
        if isinstance(value, list) and key not in ("seeds", "columns"):
            if len(value) > 1:
                grid[key] = value
                value = value[0]
            else:
                grid.pop(key, None)
                value = value[0]
        base[key] = value
    if base.get("dataset"):
        base["pattern"] = None
    if base.get("seeds") is not None and "replications" not in base:
        base["replications"] = len(base["seeds"])
    base["grid"] = grid
    cfg = ExperimentConfig.from_dict(base)
    if cfg.seed is None and cfg.seeds is None:
        raise _UsageError("--seed (or --seeds) is required for this command")
    return cfg


def _out_dir(cfg: ExperimentConfig) -> str:
    return cfg.output_dir or default_output_dir()


def _print_summary(records):
    for row in summarize(records):
        rm = "n/a" if row["rmse_mean"] is None else f"{row['rmse_mean']:.4g} (std {row['rmse_std']:.3g})"
        f1 = "n/a" if row["f1_mean"] is None else f"{row['f1_mean']:.4g}"
        print(f"{row['source']} {row['kernel']} A={row['window']} delta={row['delta']} "
              f"beta={row['beta']}: RMSE {rm}, F1 {f1}, {row['ok']}/{row['replications']} ok")


def _run_records(cfg: ExperimentConfig):
    if cfg.grid:
        records = run_sweep(cfg)
    else:
        records = [run_replication(cfg, r, s) for r, s in enumerate(cfg.replication_seeds())]
    out = _out_dir(cfg)
    emit_report(records, out)
    cfg.save(Path(out) / "config.json")
    _print_summary(records)
    for rec in records:
        if rec.status != "ok":
            print(f"cell {rec.cell} rep {rec.replication}: {rec.error}", file=sys.stderr)
    print(f"results in {out}")
    if all(r.status == "numerical_failure" for r in records):
        return EXIT_NUMERICAL
    if all(r.status != "ok" for r in records):
        return EXIT_USAGE
    return EXIT_OK


def _cmd_al_run(a):
    return _run_records(_experiment_config(a, Mode.REAL_DATA if a.dataset else Mode.SIMULATE))


def _cmd_bench(a):
    return _run_records(_experiment_config(a, Mode.SIMULATE))


def _cmd_sensitivity(a):
    cfg = _experiment_config(a, Mode.SENSITIVITY)
    if not cfg.grid:
        raise _UsageError("sensitivity needs several --window and/or --delta values")
    return _run_records(cfg)


def _cmd_baseline(a):
    return _run_records(_experiment_config(a, Mode.BASELINE))


_COMMANDS = {
    "generate": _cmd_generate,
    "fit": _cmd_fit,
    "profile": _cmd_profile,
    "detect": _cmd_detect,
    "evaluate": _cmd_evaluate,
    "al-run": _cmd_al_run,
    "bench": _cmd_bench,
    "sensitivity": _cmd_sensitivity,
    "baseline-dacd": _cmd_baseline,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not a.verbose:
        warnings.simplefilter("ignore", RuntimeWarning)
    try:
        return _COMMANDS[a.command](a)
    except _UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"alcpd {a.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InvalidInputError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"alcpd {a.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalFailure, ArithmeticError) as exc:
        print(f"alcpd {a.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
