"""Command-line entry point: ``kernelfactors {evaluate,forecast,montecarlo,selftest}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .data_ingest import LoadError, TimeSeriesPanel, balance_and_transform, load_fred_md, parse_month
from .evaluation import MethodSpec, RollingResult, build_report, forecast_origin, run_rolling
from .montecarlo import (
    concentration_experiment,
    consistency_experiment,
    forecast_comparison_experiment,
    write_rows,
)
from .selftest import run_all

log = logging.getLogger("kernelfactors")

EXIT_OK, EXIT_FATAL, EXIT_CONFIG = 0, 1, 2


class FatalError(RuntimeError):
    pass


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {}
    if getattr(args, "data", None):
        overrides["data_path"] = Path(args.data)
    if args.output:
        overrides["output_dir"] = Path(args.output)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.jobs is not None:
        overrides["jobs"] = args.jobs
    try:
        return replace(cfg, **overrides) if overrides else cfg
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _write_manifest(cfg: RunConfig, command: str, out: Path, extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "kernelfactors_version": __version__,
        "numpy_version": np.__version__,
        "scipy_version": scipy.__version__,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
    }
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _output_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise FatalError(f"cannot create output directory {out}: {exc.strerror}") from None
    return out


def load_panel(cfg: RunConfig) -> TimeSeriesPanel:
    if cfg.data_path is None:
        raise FatalError("no data file given (set data_path in the config or pass --data)")
    path = Path(cfg.data_path)
    if not path.is_file():
        raise FatalError(f"data file not found: {path}")
    try:
        panel = balance_and_transform(load_fred_md(path), cfg.start, cfg.end)
    except (LoadError, OSError) as exc:
        raise FatalError(f"{path}: {exc}") from None
    missing = [t for t in cfg.targets if t not in panel.names]
    if missing:
        raise FatalError(f"target(s) {missing} not found among the complete series of {path}")
    log.info("loaded %s: %d months x %d series (%d dropped as incomplete)",
             path, panel.shape[0], panel.shape[1], len(panel.dropped))
    return panel


def _first_target_row(cfg: RunConfig, panel: TimeSeriesPanel) -> int | None:
    if cfg.first_target is None:
        return None
    month = parse_month(cfg.first_target)
    return int(np.searchsorted(panel.dates, month))


def _rolling_task(task) -> tuple[int, RollingResult]:
    i, panel, target, method, h, cfg, first = task
    return i, run_rolling(panel, target, method, h, cfg.window_base, cfg.maxima,
                          first_target=first, cv_stride=cfg.cv_stride)


def _write_records(results: list[RollingResult], path: Path) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["target", "method", "horizon", "origin", "date", "forecast", "actual", "gamma", "P", "M", "K"])
        for res in results:
            for r in res.records:
                order = r.order or ("", "", "")
                w.writerow([r.target, r.method, r.horizon, str(r.origin), str(r.date), repr(r.forecast),
                            repr(r.actual), "" if r.gamma is None else repr(r.gamma), *order])


def _write_skips(results: list[RollingResult], labels: list[tuple], path: Path) -> int:
    n = 0
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["target", "method", "horizon", "origin", "reason"])
        for (target, method, h), res in zip(labels, results):
            for s in res.skips:
                w.writerow([target, method, h, str(s.origin), s.reason])
                n += 1
    return n


def cmd_evaluate(cfg: RunConfig) -> int:
    panel = load_panel(cfg)
    out = _output_dir(cfg)
    first = _first_target_row(cfg, panel)
    tasks, labels = [], []
    for target in cfg.targets:
        for h in cfg.horizons:
            for method in cfg.methods:
                tasks.append((len(tasks), panel, target, method, h, cfg, first))
                labels.append((target, method.label, h))
    results: list[RollingResult | None] = [None] * len(tasks)
    started = time.monotonic()

    def done(i, res):
        results[i] = res
        finished = sum(r is not None for r in results)
        target, label, h = labels[i]
        log.info("[%d/%d] %s h=%d %s: %d forecasts, %d skipped (%.0fs elapsed)",
                 finished, len(tasks), target, h, label, len(res), len(res.skips), time.monotonic() - started)

    try:
        if cfg.jobs > 1:
            with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
                for i, res in pool.map(_rolling_task, tasks):
                    done(i, res)
        else:
            for task in tasks:
                done(*_rolling_task(task))
    except ValueError as exc:
        raise FatalError(str(exc)) from None

    labels_seen = [m.label for m in cfg.methods]
    baseline = "pca" if "pca" in labels_seen else labels_seen[0]
    records = [r for res in results for r in res.records]
    if not records:
        raise FatalError("no forecasts were produced")
    try:
        report = build_report(records, baseline=baseline)
    except ValueError as exc:
        raise FatalError(f"cannot build report: {exc}") from None
    report.to_csv(out / "report.csv")
    (out / "report.txt").write_text(report.to_text())
    _write_records(results, out / "records.csv")
    n_skips = _write_skips(results, labels, out / "skips.csv")
    _write_manifest(cfg, "evaluate", out, {
        "data_rows": int(panel.shape[0]), "data_series": int(panel.shape[1]),
        "first_date": str(panel.dates[0]), "last_date": str(panel.dates[-1]),
        "dropped_series": list(panel.dropped), "skipped_origins": n_skips,
    })
    sys.stdout.write(report.to_text())
    log.info("wrote report.csv, report.txt, records.csv, skips.csv and manifest.json to %s", out)
    return EXIT_OK


def cmd_forecast(cfg: RunConfig, asof: str) -> int:
    panel = load_panel(cfg)
    out = _output_dir(cfg)
    try:
        month = parse_month(asof)
    except ValueError as exc:
        raise FatalError(f"bad --asof value {asof!r}: {exc}") from None
    if not panel.dates[0] <= month <= panel.dates[-1]:
        raise FatalError(f"--asof {asof} is outside the sample {panel.dates[0]}..{panel.dates[-1]}")
    origin = int(np.searchsorted(panel.dates, month))
    rows = []
    for target in cfg.targets:
        for h in cfg.horizons:
            L = cfg.window_base - h
            if origin < L - 1:
                raise FatalError(
                    f"--asof {asof} precedes the first full {L}-month window at h={h} (earliest {panel.dates[L - 1]})"
                )
            for method in cfg.methods:
                try:
                    fc = forecast_origin(panel, target, method, h, origin, cfg.window_base, cfg.maxima)
                except ValueError as exc:
                    raise FatalError(f"{target} {method.label} h={h}: {exc}") from None
                rows.append({"target": target, "method": method.label, "horizon": h, "asof": str(month),
                             "date": str(month + h), "forecast": fc.forecast,
                             "gamma": "" if fc.gamma is None else fc.gamma,
                             "P": fc.order[0], "M": fc.order[1], "K": fc.order[2]})
    write_rows(rows, out / "forecasts.csv")
    _write_manifest(cfg, "forecast", out, {"asof": str(month)})
    w = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return EXIT_OK


def cmd_montecarlo(cfg: RunConfig) -> int:
    out = _output_dir(cfg)
    mc = cfg.montecarlo
    log.info("consistency experiment over %s", list(mc.consistency_grid))
    rows = consistency_experiment(mc.consistency_grid, r=mc.n_factors,
                                  replications=mc.consistency_replications, seed=cfg.seed)
    write_rows(rows, out / "consistency.csv")
    log.info("concentration experiment over T=%s", list(mc.concentration_t_grid))
    rows = concentration_experiment(mc.concentration_t_grid, replications=mc.concentration_replications,
                                    seed=cfg.seed, gamma=mc.concentration_gamma)
    write_rows(rows, out / "concentration.csv")
    written = ["consistency.csv", "concentration.csv"]
    if mc.forecast_seeds > 0:
        log.info("forecast comparison over %d seeds, h=%s", mc.forecast_seeds, list(mc.forecast_horizons))
        seeds = range(cfg.seed, cfg.seed + mc.forecast_seeds)
        rows = forecast_comparison_experiment(mc.forecast_horizons, seeds, cv_stride=cfg.cv_stride)
        write_rows(rows, out / "forecast_comparison.csv")
        written.append("forecast_comparison.csv")
    _write_manifest(cfg, "montecarlo", out)
    log.info("wrote %s and manifest.json to %s", ", ".join(written), out)
    return EXIT_OK


def cmd_selftest() -> int:
    results = run_all()
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    print(f"{sum(r.passed for r in results)}/{len(results)} checks passed")
    return EXIT_OK if ok else EXIT_FATAL


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--jobs", type=int, help="worker processes for independent rolling runs")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--output", help="output directory (overrides output_dir)")
    common.add_argument("--data", help="FRED-MD style CSV (overrides data_path)")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(prog="kernelfactors", description="Kernel factor forecasting toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("evaluate", parents=[common], help="rolling out-of-sample evaluation and report")
    fc = sub.add_parser("forecast", parents=[common], help="forecasts from a single origin")
    fc.add_argument("--asof", required=True, help="forecast origin month (YYYY-MM)")
    sub.add_parser("montecarlo", parents=[common], help="simulation experiments")
    sub.add_parser("selftest", parents=[common], help="numerical identity checks")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "selftest":
            return cmd_selftest()
        cfg = _resolve_config(args)
        if args.command == "evaluate":
            return cmd_evaluate(cfg)
        if args.command == "forecast":
            return cmd_forecast(cfg, args.asof)
        return cmd_montecarlo(cfg)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except FatalError as exc:
        log.error("%s", exc)
        return EXIT_FATAL
    except Exception as exc:  # noqa: BLE001 - last-resort guard so the exit code stays meaningful
        log.error("unexpected failure: %s", exc, exc_info=args.verbose)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
