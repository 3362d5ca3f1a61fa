"""Reading data files and writing/reading result artifacts.

CSV files start with ``# key: value`` header lines (settings, seeds) and
write floats with 17 significant digits.  JSON artifacts use Python's
shortest round-trip float representation, which is also bit-exact.
"""

from __future__ import annotations

import csv
import json
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from cdnarms.model import ARLayer, GhilLayer, LayerSpec, MarkovChainSpec, SwitchingModel
from cdnarms.saem import FitResult
from cdnarms.series import TimeSeries


class DataError(ValueError):
    """Malformed input data (the message names the offending row)."""


def fmt(value: float) -> str:
    """17 significant digits; enough to round-trip any double."""
    return format(float(value), ".17g")


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------


def _header_lines(header: Mapping[str, Any] | None) -> list[str]:
    if not header:
        return []
    return [f"# {key}: {json.dumps(value, sort_keys=True)}" for key, value in header.items()]


def write_csv(
    path: str | Path,
    columns: Sequence[str],
    rows: Iterable[Sequence[Any]],
    header: Mapping[str, Any] | None = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        for line in _header_lines(header):
            fh.write(line + "\n")
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def read_csv_header(path: str | Path) -> dict[str, Any]:
    out: dict[str, Any] = {}
    with Path(path).open() as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition(": ")
            out[key] = json.loads(value)
    return out


def _data_lines(path: Path) -> list[tuple[int, list[str]]]:
    rows = []
    with path.open(newline="") as fh:
        numbered = ((i, line) for i, line in enumerate(fh, start=1))
        body = [(i, line) for i, line in numbered if line.strip() and not line.startswith("#")]
    reader = csv.reader(line for _, line in body)
    for (lineno, _), fields in zip(body, reader):
        rows.append((lineno, [f.strip() for f in fields]))
    return rows


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


@dataclass(frozen=True, eq=False)
class Ingested:
    series: TimeSeries
    rows: int
    #: First and last entries of the date column, when one was named.
    date_range: tuple[str, str] | None


def ingest_csv(
    path: str | Path,
    column: str | int | None = None,
    history: int = 24,
    date_column: str | int | None = None,
) -> Ingested:
    """Load a single-variable series; the first ``history`` rows become pre-sample values.

    ``column`` is a header name or 0-based index; by default the column
    named ``x`` if there is a header with one, else column 0.  The first
    row is a header when none of its fields is numeric.

    Raises
    ------
    DataError
        On an empty file, a missing or non-numeric cell (with its line
        number), or too few rows for the history plus two samples.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    lines = _data_lines(path)
    if not lines:
        raise DataError(f"{path}: no data rows")
    names: list[str] | None = None
    first = lines[0][1]
    if not any(_is_number(f) for f in first):
        names = first
        lines = lines[1:]

    def resolve(spec: str | int | None, fallback: int | None) -> int | None:
        if spec is None:
            return fallback
        if isinstance(spec, int) or (isinstance(spec, str) and spec.isdigit()):
            return int(spec)
        if names is None or spec not in names:
            raise DataError(f"{path}: no column named {spec!r}")
        return names.index(spec)

    default = names.index("x") if names is not None and "x" in names else 0
    col = resolve(column, default)
    dcol = resolve(date_column, None)
    values = []
    for lineno, fields in lines:
        if col >= len(fields) or fields[col] == "":
            raise DataError(f"{path}: line {lineno}: missing value in column {col}")
        try:
            v = float(fields[col])
        except ValueError:
            raise DataError(f"{path}: line {lineno}: non-numeric value {fields[col]!r}") from None
        if not math.isfinite(v):
            raise DataError(f"{path}: line {lineno}: non-finite value {fields[col]!r}")
        values.append(v)
    if len(values) < history + 2:
        raise DataError(f"{path}: {len(values)} rows, need more than {history + 1}")
    dates = None
    if dcol is not None:
        dates = (lines[0][1][dcol], lines[-1][1][dcol])
    arr = np.asarray(values)[:, None]
    return Ingested(TimeSeries(arr, history), len(values), dates)


def write_series(
    path: str | Path,
    series: TimeSeries,
    regimes: Sequence[int] | None = None,
    header: Mapping[str, Any] | None = None,
) -> Path:
    """Columns ``n, x[, regime]``; history rows have negative ``n``.

    Regimes are written 1-based (blank on history rows).
    """
    ns = range(-series.H, series.T + 1)
    x = series.data[:, 0]
    if regimes is None:
        rows = ((n, float(v)) for n, v in zip(ns, x))
        return write_csv(path, ["n", "x"], rows, header)
    lab = [""] * series.H + [int(r) + 1 for r in regimes]
    rows = ((n, float(v), r) for n, v, r in zip(ns, x, lab))
    return write_csv(path, ["n", "x", "regime"], rows, header)


def read_series(path: str | Path) -> tuple[TimeSeries, np.ndarray | None]:
    """Inverse of :func:`write_series` (history taken from the negative ``n`` rows)."""
    lines = _data_lines(Path(path))
    names = lines[0][1]
    if names[:2] != ["n", "x"]:
        raise DataError(f"{path}: expected columns n, x")
    n = np.array([int(f[0]) for _, f in lines[1:]])
    x = np.array([float(f[1]) for _, f in lines[1:]])
    H = int(np.sum(n < 0))
    regimes = None
    if len(names) > 2:
        regimes = np.array([int(f[2]) - 1 for _, f in lines[1:] if int(f[0]) >= 0], dtype=np.int64)
    return TimeSeries(x[:, None], H), regimes


# --------------------------------------------------------------------------
# Models and fit results
# --------------------------------------------------------------------------


def model_to_dict(model: SwitchingModel) -> dict[str, Any]:
    layers = []
    for layer in model.layers:
        dyn = layer.dynamics
        if isinstance(dyn, GhilLayer):
            kind: dict[str, Any] = {"dynamics": "ghil"}
        elif isinstance(dyn, ARLayer):
            kind = {"dynamics": "ar", "order": dyn.order}
        else:
            raise TypeError(f"cannot serialise layer dynamics {dyn!r}")
        layers.append({**kind, "delay": layer.delay, "sigma": layer.sigma, "params": dict(layer.params)})
    return {
        "h": model.h,
        "d": model.d,
        "transition": model.chain.transition.tolist(),
        "initial": model.chain.initial.tolist(),
        "layers": layers,
    }


def model_from_dict(data: Mapping[str, Any]) -> SwitchingModel:
    layers = []
    for item in data["layers"]:
        if item["dynamics"] == "ghil":
            dyn: GhilLayer | ARLayer = GhilLayer()
        elif item["dynamics"] == "ar":
            dyn = ARLayer(int(item["order"]))
        else:
            raise ValueError(f"unknown dynamics {item['dynamics']!r}")
        layers.append(LayerSpec(dyn, item["delay"], item["sigma"], item["params"]))
    chain = MarkovChainSpec(np.array(data["transition"]), np.array(data["initial"]))
    return SwitchingModel(chain, tuple(layers), h=float(data["h"]), d=int(data["d"]))


def _finite_or_str(value: float) -> float | str:
    return value if math.isfinite(value) else repr(value)


def fit_to_dict(result: FitResult) -> dict[str, Any]:
    return {
        "loglik": _finite_or_str(result.loglik),
        "iterations": result.iterations,
        "converged": result.converged,
        "restart_index": result.restart_index,
        "restart_logliks": [_finite_or_str(v) for v in result.restart_logliks],
        "loglik_trace": [_finite_or_str(v) for v in result.loglik_trace.tolist()],
        "flags": list(result.flags),
        "parameters": result.model.parameters(),
        "model": model_to_dict(result.model),
    }


def write_json(path: str | Path, payload: Mapping[str, Any], header: Mapping[str, Any] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = {"header": dict(header or {}), **payload}
    path.write_text(json.dumps(body, indent=2, sort_keys=False, allow_nan=False) + "\n")
    return path


def read_json(path: str | Path) -> dict[str, Any]:
    return json.loads(Path(path).read_text())


def load_model(path: str | Path) -> SwitchingModel:
    """Model stored in a fit artifact (or a bare model JSON)."""
    data = read_json(path)
    return model_from_dict(data["model"] if "model" in data else data)
