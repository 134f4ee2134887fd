"""Batch command-line front end.

Subcommands: ingest (raw CSV to per-house cache), train (one run),
bench (full experiment grid), report (results CSV to summary table),
trace (checkpoints + house + date to forecast CSV/SVG), selftest
(gradient and invariant checks).

Exit codes: 0 success, 1 for data/model errors (one `<code>: <message>`
line on stderr), 2 for usage errors. Any flag default can also be set via
an environment variable with the `LOADCAST_` prefix, e.g. `LOADCAST_DATA`
for `--data`.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from datetime import date, datetime, timezone

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import ExperimentConfig, load_config
from .data import HALF_HOUR, load_series_cache, parse_readings, save_series_cache
from .errors import EmptyInputError, LoadcastError
from .evaluation import (
    ForecastTrace,
    export_trace_csv,
    export_trace_svg,
    format_summary_table,
    summarize,
    write_summary_csv,
)
from .gradcheck import check_gradients
from .models import MODEL_KINDS, MODEL_LABELS, RecurrentSpec, TransformerSpec, build_forecaster
from .models.attention import causal_mask, scaled_dot_attention
from .rng import make_rng
from .training import (
    TrainSpec,
    RunTask,
    execute_run_detailed,
    load_run_checkpoint,
    mse_loss,
    read_results_csv,
    run_grid,
    save_run_checkpoint,
    write_results_csv,
)

__all__ = ["main", "build_parser"]


def _env(name: str, fallback=None):
    return os.environ.get(f"LOADCAST_{name}", fallback)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="loadcast",
        description="Meter-level electricity load forecasting benchmark.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add_common(p, *, data=False, out=False, seed=False, config=False):
        if data:
            p.add_argument("--data", default=_env("DATA"),
                           help="data directory (cleaned per-house cache)")
        if out:
            p.add_argument("--out", default=_env("OUT"), help="output directory")
        if seed:
            p.add_argument("--seed", type=int, default=int(_env("SEED", "0")),
                           help="base seed controlling all randomness")
        if config:
            p.add_argument("--config", default=_env("CONFIG"),
                           help="experiment config file (TOML)")

    p = sub.add_parser("ingest", help="clean a raw meter CSV into per-house cache files")
    p.add_argument("--data", default=_env("DATA"), help="raw CSV file")
    p.add_argument("--out", default=_env("OUT"), help="cache directory to write")
    p.add_argument("--houses", nargs="+", default=None,
                   help="keep only these household ids")

    p = sub.add_parser("train", help="train one model on one house and report test MAPE")
    add_common(p, data=True, out=True, seed=True, config=True)
    p.add_argument("--house", required=True, help="household id")
    p.add_argument("--model", required=True, choices=MODEL_KINDS)
    p.add_argument("--window", type=int, required=True, help="input window length n in TIs")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default=None)
    p.add_argument("--max-readings", type=int, default=None,
                   help="truncate the series to this many readings")

    p = sub.add_parser("bench", help="run the full houses x models x windows x seeds grid")
    add_common(p, data=True, out=True, seed=True, config=True)
    p.add_argument("--workers", type=int, default=int(_env("WORKERS", "1")),
                   help="parallel worker processes (1 = serial)")
    p.add_argument("--houses", nargs="+", default=None, help="override config house list")
    p.add_argument("--models", nargs="+", choices=MODEL_KINDS, default=None,
                   help="override config model list")
    p.add_argument("--windows", nargs="+", type=int, default=None,
                   help="override config window lengths")
    p.add_argument("--seeds-per-cell", type=int, default=None,
                   help="override config replicate count")
    p.add_argument("--max-readings", type=int, default=None,
                   help="truncate each series to this many readings")
    p.add_argument("--no-timing", action="store_true",
                   help="write train_seconds as 0.0 so output files are byte-reproducible")
    p.add_argument("--verbose", action="store_true", help="print each completed run")

    p = sub.add_parser("report", help="aggregate a results CSV into a summary table")
    p.add_argument("--results", required=True, help="results CSV from bench")
    p.add_argument("--out", default=_env("OUT"),
                   help="directory to write summary.csv (omit to just print)")

    p = sub.add_parser("trace", help="forecast one day from trained checkpoints")
    add_common(p, data=True, out=True)
    p.add_argument("--house", required=True, help="household id")
    p.add_argument("--date", required=True, help="day to forecast, YYYY-MM-DD")
    p.add_argument("--checkpoints", nargs="+", required=True,
                   help="one or more checkpoint files from `train`")

    p = sub.add_parser("selftest", help="run gradient and attention invariant checks")
    add_common(p, seed=True)

    return parser


def _require(value, flag: str):
    if value is None:
        raise EmptyInputError(f"{flag} is required (flag or LOADCAST_{flag.lstrip('-').upper()})")
    return value


def _load_house_values(data_dir, house: str, max_readings=None) -> tuple:
    series = load_series_cache(data_dir, house)
    if max_readings is not None:
        series = series.truncate(max_readings)
    return tuple(float(v) for v in series.values())


def _experiment_config(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        return load_config(args.config)
    return ExperimentConfig()


def _train_spec(cfg: ExperimentConfig, args) -> TrainSpec:
    spec = TrainSpec(**cfg.train_kwargs)
    overrides = {}
    for attr, key in (("epochs", "epochs"), ("batch_size", "batch_size"),
                      ("learning_rate", "learning_rate"), ("optimizer", "optimizer")):
        value = getattr(args, attr, None)
        if value is not None:
            overrides[key] = value
    return replace(spec, **overrides) if overrides else spec


def _cmd_ingest(args) -> int:
    raw_path = _require(args.data, "--data")
    out_dir = _require(args.out, "--out")
    with open(raw_path, "r", encoding="utf-8", newline="") as fh:
        parsed = parse_readings(fh)
    keep = set(args.houses) if args.houses else None
    written = 0
    for house, series in parsed.series.items():
        if keep is not None and house not in keep:
            continue
        save_series_cache(series, out_dir)
        print(f"ingest: {house}: {len(series)} readings")
        written += 1
    if keep is not None:
        missing = sorted(keep - set(parsed.series))
        if missing:
            raise EmptyInputError(f"no readings for requested households: {', '.join(missing)}")
    print(
        f"ingest: {parsed.row_count} rows, {parsed.dropped_count} dropped, "
        f"{parsed.duplicate_count} duplicates, {written} households -> {out_dir}"
    )
    return 0


def _cmd_train(args) -> int:
    data_dir = _require(args.data, "--data")
    cfg = _experiment_config(args)
    values = _load_house_values(data_dir, args.house, args.max_readings)
    task = RunTask(
        house_id=args.house,
        values=values,
        model_kind=args.model,
        n=args.window,
        seed=args.seed,
        train=_train_spec(cfg, args),
        transformer=cfg.transformer,
        recurrent=cfg.recurrent,
    )
    result, model, scaler = execute_run_detailed(task)
    print(
        f"train: model={result.model_kind} house={result.house_id} n={result.n} "
        f"seed={result.seed} mape={result.test_mape_percent:.2f}% "
        f"train_seconds={result.train_seconds:.3f}"
    )
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        name = f"{args.house}_{args.model}_n{args.window}_seed{args.seed}.ckpt"
        path = os.path.join(args.out, name)
        save_run_checkpoint(path, model, scaler, house_id=args.house, n=args.window,
                            seed=args.seed)
        print(f"train: checkpoint -> {path}")
    return 0


def _cmd_bench(args) -> int:
    data_dir = _require(args.data, "--data")
    out_dir = _require(args.out, "--out")
    if args.workers < 1:
        raise EmptyInputError(f"--workers must be >= 1, got {args.workers}")
    cfg = _experiment_config(args)
    grid = cfg.grid
    overrides = {}
    if args.houses is not None:
        overrides["houses"] = tuple(args.houses)
    if args.models is not None:
        overrides["models"] = tuple(args.models)
    if args.windows is not None:
        overrides["windows"] = tuple(args.windows)
    if args.seeds_per_cell is not None:
        overrides["seeds_per_cell"] = args.seeds_per_cell
    if args.max_readings is not None:
        overrides["max_readings"] = args.max_readings
    if overrides:
        grid = replace(grid, **overrides)

    houses = {}
    for house in grid.houses:
        houses[house] = _load_house_values(data_dir, house, grid.max_readings)
    print(
        f"bench: {len(grid.houses)} houses x {len(grid.models)} models x "
        f"{len(grid.windows)} windows x {grid.seeds_per_cell} seeds = {grid.run_count} runs"
    )

    progress = None
    if args.verbose:
        progress = lambda done, total: print(f"bench: run {done}/{total}", flush=True)
    outcome = run_grid(
        houses, grid.models, grid.windows,
        replicates=grid.seeds_per_cell,
        base_seed=args.seed,
        train=TrainSpec(**cfg.train_kwargs),
        transformer=cfg.transformer,
        recurrent=cfg.recurrent,
        split_ratio=grid.split_ratio,
        workers=args.workers,
        progress=progress,
    )

    os.makedirs(out_dir, exist_ok=True)
    results_path = os.path.join(out_dir, "results.csv")
    summary_path = os.path.join(out_dir, "summary.csv")
    write_results_csv(outcome.results, results_path, zero_timing=args.no_timing)
    if outcome.results:
        rows = summarize(outcome.results)
        write_summary_csv(rows, summary_path, zero_timing=args.no_timing)
        print(format_summary_table(rows))
    print(f"bench: {len(outcome.results)} results -> {results_path}")
    if outcome.failures:
        for f in outcome.failures:
            print(
                f"bench: FAILED {f.model_kind} n={f.n} house={f.house_id} "
                f"seed={f.seed}: {f.error}",
                file=sys.stderr,
            )
        print(
            f"run-failures: {len(outcome.failures)} of "
            f"{len(outcome.results) + len(outcome.failures)} runs failed",
            file=sys.stderr,
        )
        return 1
    return 0


def _cmd_report(args) -> int:
    results = read_results_csv(args.results)
    rows = summarize(results)
    print(format_summary_table(rows))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "summary.csv")
        write_summary_csv(rows, path)
        print(f"report: summary -> {path}")
    return 0


def _parse_day(text: str) -> datetime:
    try:
        day = date.fromisoformat(text)
    except ValueError:
        raise EmptyInputError(f"--date must be YYYY-MM-DD, got {text!r}")
    return datetime(day.year, day.month, day.day, tzinfo=timezone.utc)


def _cmd_trace(args) -> int:
    data_dir = _require(args.data, "--data")
    out_dir = _require(args.out, "--out")
    day_start = _parse_day(args.date)

    series = load_series_cache(data_dir, args.house)
    stamps = series.timestamps()
    values = series.values()
    index = {ts: i for i, ts in enumerate(stamps)}

    day_slots = [day_start + i * HALF_HOUR for i in range(48)]
    missing = [ts for ts in day_slots if ts not in index]
    if missing:
        raise EmptyInputError(
            f"house {args.house}: {len(missing)} of 48 half-hours missing on {args.date}"
        )
    positions = [index[ts] for ts in day_slots]

    forecasts = {}
    for ckpt_path in args.checkpoints:
        model, scaler, meta = load_run_checkpoint(ckpt_path)
        n = int(meta["n"])
        if positions[0] < n:
            raise EmptyInputError(
                f"house {args.house}: need {n} readings before {args.date} for {ckpt_path}"
            )
        windows = np.stack([values[p - n:p] for p in positions])
        preds = scaler.inverse(model.predict_batch(scaler.transform(windows)))
        label = MODEL_LABELS[model.kind]
        while label in forecasts:
            label += "'"
        forecasts[label] = tuple(float(v) for v in preds)

    trace = ForecastTrace(
        house_id=args.house,
        timestamps=tuple(day_slots),
        truth_kwh=tuple(float(values[p]) for p in positions),
        forecasts=forecasts,
    )
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"trace_{args.house}_{args.date}.csv")
    svg_path = os.path.join(out_dir, f"trace_{args.house}_{args.date}.svg")
    export_trace_csv(trace, csv_path)
    export_trace_svg(trace, svg_path)
    print(f"trace: {len(day_slots)} points, {len(forecasts)} models -> {csv_path}, {svg_path}")
    return 0


def _selftest_gradients(seed: int) -> list[str]:
    t_spec = TransformerSpec(n_layers=2, d_model=8, n_heads=2, d_ff=16, dropout_rate=0.0)
    r_spec = RecurrentSpec(hidden_size=8)
    n, batch = 3, 4
    failures = []
    for kind in MODEL_KINDS:
        model = build_forecaster(kind, make_rng(seed, "selftest", kind),
                                 transformer_spec=t_spec, recurrent_spec=r_spec)
        data_rng = make_rng(seed, "selftest-data", kind)
        windows = data_rng.uniform(-1.0, 1.0, size=(batch, n))
        targets = data_rng.uniform(-1.0, 1.0, size=batch)
        report = check_gradients(
            lambda: mse_loss(model.forward(windows), targets),
            model.params.items(),
        )
        status = "PASS" if report.ok() else "FAIL"
        print(
            f"selftest: gradcheck {kind}: {report.checked_count} coords, "
            f"max_rel_err={report.max_rel_err:.3e} {status}"
        )
        if not report.ok():
            failures.append(f"gradcheck {kind}")
    return failures


def _selftest_attention(seed: int) -> list[str]:
    rng = make_rng(seed, "selftest-attention")
    worst_row = 0.0
    worst_masked = 0.0
    for _ in range(200):
        length, dk = int(rng.integers(2, 6)), int(rng.integers(2, 5))
        q = Tensor(rng.uniform(-2, 2, (length, dk)))
        k = Tensor(rng.uniform(-2, 2, (length, dk)))
        v = Tensor(rng.uniform(-2, 2, (length, dk)))
        mask = causal_mask(length)
        _, weights = scaled_dot_attention(q, k, v, mask=mask)
        w = weights.data
        worst_row = max(worst_row, float(np.abs(w.sum(axis=-1) - 1.0).max()))
        worst_masked = max(worst_masked, float(np.abs(w[~mask]).max()))
    ok = worst_row < 1e-12 and worst_masked == 0.0
    print(
        f"selftest: attention rows max|sum-1|={worst_row:.3e}, "
        f"masked max={worst_masked:.1e} {'PASS' if ok else 'FAIL'}"
    )
    return [] if ok else ["attention invariants"]


def _selftest_softmax(seed: int) -> list[str]:
    rng = make_rng(seed, "selftest-softmax")
    worst = 0.0
    for _ in range(200):
        x = rng.uniform(-5, 5, (3, 7))
        shift = float(rng.uniform(-100, 100))
        a = ad.softmax(Tensor(x), axis=-1).data
        b = ad.softmax(Tensor(x + shift), axis=-1).data
        worst = max(worst, float(np.abs(a - b).max()))
    ok = worst < 1e-12
    print(f"selftest: softmax shift-invariance max diff={worst:.3e} {'PASS' if ok else 'FAIL'}")
    return [] if ok else ["softmax shift invariance"]


def _cmd_selftest(args) -> int:
    failures = []
    failures += _selftest_gradients(args.seed)
    failures += _selftest_attention(args.seed)
    failures += _selftest_softmax(args.seed)
    if failures:
        print(f"selftest: FAILED: {', '.join(failures)}", file=sys.stderr)
        return 1
    print("selftest: all checks passed")
    return 0


_COMMANDS = {
    "ingest": _cmd_ingest,
    "train": _cmd_train,
    "bench": _cmd_bench,
    "report": _cmd_report,
    "trace": _cmd_trace,
    "selftest": _cmd_selftest,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse handles usage errors and --help
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except LoadcastError as exc:
        print(f"{exc.code}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
