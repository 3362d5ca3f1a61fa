"""Command-line front end: ``cdnarms <command> [--config FILE] [flags]``.

Commands: simulate, fit, select, stability, diagnose, experiment.  Results go
to ``--out-dir``; every file carries the seed and the full settings,
including the defaults that were applied.  Failures write ``error.json`` and
exit nonzero (2 for usage or configuration errors, 1 otherwise).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import traceback
from collections.abc import Sequence
from dataclasses import replace
from pathlib import Path
from typing import Any

import numpy as np

from cdnarms import io
from cdnarms.config import (
    ConfigError,
    Settings,
    build_model,
    fit_config,
    fit_template,
    history_length,
)
from cdnarms.evaluate import empirical_acf, ensemble_acf, model_sampler, qq_quantiles
from cdnarms.experiment import run_protocol
from cdnarms.saem import FitError, fit
from cdnarms.selection import select_layers
from cdnarms.series import TimeSeries
from cdnarms.simulate import simulate, simulate_fine_grid
from cdnarms.stability import certify

log = logging.getLogger("cdnarms")

COMMANDS = ("simulate", "fit", "select", "stability", "diagnose", "experiment")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # raise instead of exiting so an error record gets written
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cdnarms", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="INI settings file")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--jobs", type=int, help="worker processes for restarts/replicates")
    parser.add_argument("--out-dir", default="results")
    parser.add_argument("--restarts", type=int)
    parser.add_argument("--iters", type=int, help="SA-EM iterations per restart")
    parser.add_argument("--layers", help="candidate layer counts, e.g. 2:4")
    parser.add_argument("--integer-delays", action=argparse.BooleanOptionalAction, default=None)
    parser.add_argument("--data", help="input CSV (overrides [data] path)")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def _apply_flags(settings: Settings, args: argparse.Namespace) -> None:
    overrides = [
        ("run", "seed", args.seed),
        ("fit", "jobs", args.jobs),
        ("fit", "restarts", args.restarts),
        ("fit", "max_iter", args.iters),
        ("select", "layers", args.layers),
        ("data", "path", args.data),
    ]
    if args.integer_delays is not None:
        overrides.append(("fit", "integer_delays", str(args.integer_delays).lower()))
    for section, key, value in overrides:
        if value is not None:
            settings.set(section, key, value, "flag")


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def _load_data(settings: Settings) -> tuple[TimeSeries, dict[str, Any]]:
    if not settings.is_set("data", "path"):
        raise ConfigError("no input data: set [data] path or pass --data")
    column = settings.raw("data", "column") if settings.is_set("data", "column") else None
    dcol = settings.raw("data", "date_column") if settings.is_set("data", "date_column") else None
    hist = math.ceil(settings.float("fit", "delay_max"))
    got = io.ingest_csv(settings.raw("data", "path"), column, hist, dcol)
    info = {
        "path": settings.raw("data", "path"),
        "rows": got.rows,
        "history": got.series.H,
        "T": got.series.T,
        "date_range": list(got.date_range) if got.date_range else None,
    }
    log.info("loaded %d rows (history %d, T=%d)", got.rows, got.series.H, got.series.T)
    return got.series, info


def cmd_simulate(settings: Settings, out: Path) -> list[Path]:
    model = build_model(settings)
    T, m = settings.int("simulate", "T"), settings.int("simulate", "m")
    H = history_length(settings)
    seed = settings.seed()
    if m == 1:
        sim = simulate(model, T, seed=seed, history_length=H)
    else:
        sim = simulate_fine_grid(model, m, T, seed=seed, history_length=H)
    header = settings.header("simulate")
    return [
        io.write_series(out / "series.csv", sim.series, sim.regimes, header),
        io.write_json(out / "model.json", {"model": io.model_to_dict(model)}, header),
    ]


def cmd_fit(settings: Settings, out: Path) -> list[Path]:
    series, info = _load_data(settings)
    template = fit_template(settings)
    config = fit_config(settings)
    start = settings.raw("fit", "start").lower()
    if start not in ("random", "model"):
        raise ConfigError("[fit] start must be 'random' or 'model'")
    initial = [template] if start == "model" else None
    result = fit(series, template, config, initial=initial)
    header = {**settings.header("fit"), "data": info}
    return [io.write_json(out / "fit.json", io.fit_to_dict(result), header)]


def cmd_select(settings: Settings, out: Path) -> list[Path]:
    series, info = _load_data(settings)
    config = fit_config(settings)
    templates = {L: fit_template(settings, L) for L in settings.layer_range()}
    sel = select_layers(series, templates, config)
    header = {**settings.header("select"), "data": info, "selected": sel.L, "excluded": sel.excluded}
    rows = [
        (s.L, s.loglik, s.param_count, s.penalty, s.penalized, s.T, int(s.L == sel.L))
        for s in sel.scores
    ]
    paths = [
        io.write_csv(
            out / "scores.csv",
            ["L", "loglik", "param_count", "penalty", "penalized", "T", "selected"],
            rows,
            header,
        )
    ]
    for L, result in sel.fits.items():
        paths.append(io.write_json(out / f"fit_L{L}.json", io.fit_to_dict(result), header))
    return paths


def _model_from(settings: Settings, section: str):
    if settings.is_set(section, "model"):
        return io.load_model(settings.raw(section, "model"))
    return build_model(settings)


def cmd_stability(settings: Settings, out: Path) -> list[Path]:
    model = _model_from(settings, "stability")
    report = certify(model, settings.floats("stability", "orders"), settings.float("stability", "threshold"))
    payload = {
        "complete": report.complete,
        "lipschitz": list(report.lipschitz),
        "clamped": list(report.clamped),
        "stationary": None if report.stationary is None else report.stationary.tolist(),
        "contraction": report.contraction,
        "threshold": report.threshold,
        "contraction_below_threshold": report.contraction_ok,
        "contraction_below_zero": report.contraction_negative,
        "moments": [
            {"s": mc.s, "matrix": mc.matrix.tolist(), "rho": mc.rho, "certified": mc.certified}
            for mc in report.moments
        ],
        "flags": list(report.flags),
        "model": io.model_to_dict(model),
    }
    return [io.write_json(out / "stability.json", payload, settings.header("stability"))]


def cmd_diagnose(settings: Settings, out: Path) -> list[Path]:
    series, info = _load_data(settings)
    paths: list[Path] = []
    if settings.is_set("diagnose", "model"):
        model = io.load_model(settings.raw("diagnose", "model"))
    else:
        result = fit(series, fit_template(settings), fit_config(settings))
        model = result.model
        header = {**settings.header("diagnose"), "data": info}
        paths.append(io.write_json(out / "fit.json", io.fit_to_dict(result), header))
    max_lag = settings.int("diagnose", "max_lag")
    n_sims = settings.int("diagnose", "n_sims")
    levels = settings.floats("diagnose", "levels")
    seed = settings.seed()
    sampler = model_sampler(model, series.T, history_length=series.H)
    data_acf = empirical_acf(series, max_lag)
    model_acf = ensemble_acf(sampler, n_sims, max_lag, seed=seed)
    qq = qq_quantiles(series, sampler, n_sims, levels, seed=seed)
    header = {**settings.header("diagnose"), "data": info, "model": io.model_to_dict(model)}
    paths.append(
        io.write_csv(
            out / "acf.csv",
            ["lag", "data", "model"],
            ((k, float(data_acf[k]), float(model_acf[k])) for k in range(max_lag + 1)),
            header,
        )
    )
    paths.append(
        io.write_csv(out / "qq.csv", ["level", "data", "model"], (tuple(map(float, r)) for r in qq), header)
    )
    return paths


def cmd_experiment(settings: Settings, out: Path) -> list[Path]:
    model = build_model(settings)
    config = fit_config(settings)
    result = run_protocol(
        model,
        settings.ints("experiment", "lengths"),
        settings.int("experiment", "replicates"),
        replace(config, jobs=1),
        m=settings.int("experiment", "m"),
        seed=settings.seed(),
        jobs=config.jobs,
    )
    header = {**settings.header("experiment"), "truth": io.model_to_dict(result.truth)}
    errors = io.write_csv(
        out / "errors.csv",
        ["replicate", "T", "parameter", "error"],
        ((e.replicate, e.T, e.parameter, float(e.error)) for e in result.errors),
        header,
    )
    names = sorted({k for r in result.runs for k in r.parameters})
    runs = io.write_csv(
        out / "runs.csv",
        ["replicate", "T", "loglik", "failure", *names],
        (
            (r.replicate, r.T, float(r.loglik), r.failure or "", *(float(r.parameters.get(k, np.nan)) for k in names))
            for r in result.runs
        ),
        header,
    )
    paths = [errors, runs]
    if result.detections:
        replicates = settings.int("experiment", "replicates")
        paths.append(
            io.write_csv(
                out / "detections.csv",
                ["T", "F_D", "replicates"],
                ((T, F, replicates) for T, F in sorted(result.detections.items())),
                header,
            )
        )
    return paths


HANDLERS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "select": cmd_select,
    "stability": cmd_stability,
    "diagnose": cmd_diagnose,
    "experiment": cmd_experiment,
}


# --------------------------------------------------------------------------
# Entry point
# --------------------------------------------------------------------------


def _out_dir_from(argv: Sequence[str]) -> Path:
    for i, arg in enumerate(argv):
        if arg == "--out-dir" and i + 1 < len(argv):
            return Path(argv[i + 1])
        if arg.startswith("--out-dir="):
            return Path(arg.split("=", 1)[1])
    return Path("results")


def _write_error(out: Path, command: str | None, exc: BaseException, code: int) -> None:
    record = {
        "command": command,
        "exit_code": code,
        "error": type(exc).__name__,
        "message": str(exc),
        "diagnostics": list(getattr(exc, "diagnostics", [])),
    }
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "error.json").write_text(json.dumps(record, indent=2) + "\n")
    except OSError:
        pass
    print(f"cdnarms: error: {exc}", file=sys.stderr)


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    command = None
    try:
        args = build_parser().parse_args(argv)
        command = args.command
        out = Path(args.out_dir)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
        )
        settings = Settings.load(args.config)
        _apply_flags(settings, args)
        paths = HANDLERS[command](settings, out)
    except (UsageError, ConfigError) as exc:
        _write_error(_out_dir_from(argv), command, exc, 2)
        return 2
    except (FitError, io.DataError, FileNotFoundError, ValueError, FloatingPointError) as exc:
        _write_error(_out_dir_from(argv), command, exc, 1)
        return 1
    except Exception as exc:  # unexpected: keep the traceback in the record
        exc.diagnostics = traceback.format_exc().splitlines()  # type: ignore[attr-defined]
        _write_error(_out_dir_from(argv), command, exc, 1)
        return 1
    for path in paths:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
