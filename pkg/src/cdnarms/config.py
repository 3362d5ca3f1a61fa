"""INI settings for the command line, with every applied default on record.

Each value remembers where it came from (``default``, ``config``, ``flag``
or ``generated``) so that result headers can list the defaults that were
silently in force.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from cdnarms import presets
from cdnarms.model import GhilLayer, SwitchingModel
from cdnarms.saem import DEFAULT_INIT_BOXES, DEFAULT_SEARCH_BOUNDS, FitConfig
from cdnarms.selection import replicate_template


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, dict[str, str]] = {
    "run": {"seed": "auto"},
    "model": {
        "preset": "enso2",
        "kind": "ghil",
        "h": repr(1.0 / 12.0),
        "transition": "",
        "a": "",
        "b": "",
        "kappa": "",
        "omega": "",
        "sigma": "",
        "delay": "",
        "coefficients": "",
    },
    "simulate": {"T": "1000", "m": "1", "history_length": "auto"},
    "fit": {
        "max_iter": "50",
        "tol": "1e-6",
        "restarts": "10",
        "delay_min": "2",
        "delay_max": "24",
        "integer_delays": "true",
        "sigma_floor": "1e-6",
        "jobs": "1",
        "start": "random",
        "layers": "auto",
        "init_boxes": ", ".join(f"{k}={lo}:{hi}" for k, (lo, hi) in DEFAULT_INIT_BOXES.items()),
        "search_bounds": ", ".join(f"{k}={lo}:{hi}" for k, (lo, hi) in DEFAULT_SEARCH_BOUNDS.items()),
    },
    "ars": {"max_iter": "200", "contraction": "2", "rmin_ratio": "1e-4", "stall": "none"},
    "select": {"layers": "2:4"},
    "data": {"path": "", "column": "auto", "date_column": "none"},
    "diagnose": {
        "model": "",
        "max_lag": "48",
        "n_sims": "2000",
        "levels": "0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99",
    },
    "experiment": {"replicates": "20", "lengths": "250, 500, 750, 1000", "m": "1"},
    "stability": {"model": "", "orders": "2", "threshold": "1.0"},
}


@dataclass
class Settings:
    values: dict[str, dict[str, str]] = field(default_factory=dict)
    sources: dict[str, dict[str, str]] = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | Path | None = None) -> Settings:
        settings = cls(
            {s: dict(kv) for s, kv in DEFAULTS.items()},
            {s: {k: "default" for k in kv} for s, kv in DEFAULTS.items()},
        )
        if path is None:
            return settings
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        parser.optionxform = str  # keep key case (``T``)
        try:
            read = parser.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if not read:
            raise ConfigError(f"cannot read config file {path}")
        for section in parser.sections():
            for key, value in parser.items(section):
                settings.set(section, key, value, "config")
        return settings

    def set(self, section: str, key: str, value: Any, source: str) -> None:
        if section not in DEFAULTS:
            raise ConfigError(f"unknown config section [{section}]")
        if key not in DEFAULTS[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        self.values[section][key] = str(value)
        self.sources[section][key] = source

    def raw(self, section: str, key: str) -> str:
        return self.values[section][key].strip()

    def is_set(self, section: str, key: str) -> bool:
        return self.raw(section, key).lower() not in ("", "auto", "none")

    def int(self, section: str, key: str) -> int:
        try:
            return int(self.raw(section, key))
        except ValueError:
            raise ConfigError(f"[{section}] {key} must be an integer") from None

    def float(self, section: str, key: str) -> float:
        try:
            return float(self.raw(section, key))
        except ValueError:
            raise ConfigError(f"[{section}] {key} must be a number") from None

    def bool(self, section: str, key: str) -> bool:
        text = self.raw(section, key).lower()
        if text in ("1", "true", "yes", "on"):
            return True
        if text in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"[{section}] {key} must be true or false")

    def floats(self, section: str, key: str) -> list[float]:
        try:
            return [float(v) for v in self.raw(section, key).replace(",", " ").split()]
        except ValueError:
            raise ConfigError(f"[{section}] {key} must be a list of numbers") from None

    def ints(self, section: str, key: str) -> list[int]:
        return [int(v) for v in self.floats(section, key)]

    def matrix(self, section: str, key: str) -> list[list[float]]:
        rows = [r for r in self.raw(section, key).split(";") if r.strip()]
        try:
            return [[float(v) for v in r.replace(",", " ").split()] for r in rows]
        except ValueError:
            raise ConfigError(f"[{section}] {key} must be rows of numbers separated by ';'") from None

    def boxes(self, section: str, key: str) -> dict[str, tuple[float, float]]:
        out = {}
        for item in self.raw(section, key).split(","):
            if not item.strip():
                continue
            try:
                name, span = item.split("=")
                lo, hi = span.split(":")
                out[name.strip()] = (float(lo), float(hi))
            except ValueError:
                raise ConfigError(f"[{section}] {key}: bad box {item.strip()!r}") from None
        return out

    def layer_range(self) -> list[int]:
        text = self.raw("select", "layers")
        for sep in (":", "-"):
            if sep in text:
                lo, hi = text.split(sep)
                try:
                    a, b = int(lo), int(hi)
                except ValueError:
                    break
                if not 1 <= a <= b:
                    raise ConfigError("[select] layers needs 1 <= lower <= upper")
                return list(range(a, b + 1))
        try:
            return [int(text)]
        except ValueError:
            raise ConfigError("[select] layers must look like 2:4") from None

    def seed(self) -> int:
        """The run seed; drawn from OS entropy (and recorded) if not given."""
        if not self.is_set("run", "seed"):
            fresh = int(np.random.SeedSequence().generate_state(1)[0])
            self.set("run", "seed", fresh, "generated")
        return self.int("run", "seed")

    def header(self, command: str) -> dict[str, Any]:
        applied = sorted(
            f"{s}.{k}" for s, kv in self.sources.items() for k, src in kv.items() if src == "default"
        )
        return {
            "command": command,
            "seed": self.seed(),
            "settings": {s: dict(kv) for s, kv in self.values.items()},
            "defaults_applied": applied,
        }


# --------------------------------------------------------------------------
# Builders
# --------------------------------------------------------------------------


def _per_layer(settings: Settings, key: str, L: int) -> list[float]:
    values = settings.floats("model", key)
    if len(values) != L:
        raise ConfigError(f"[model] {key} needs {L} values, got {len(values)}")
    return values


def build_model(settings: Settings) -> SwitchingModel:
    preset = settings.raw("model", "preset").lower()
    if preset == "enso2":
        return presets.enso_two_layer()
    if preset == "enso3":
        return presets.enso_three_layer()
    if preset in ("enso-fine", "enso_fine"):
        # delays are in fine steps, so they depend on the refinement factor in use
        m = max(settings.int("simulate", "m"), settings.int("experiment", "m"))
        return presets.enso_fine_grid(m if m > 1 else 2)
    if preset != "custom":
        raise ConfigError(f"[model] unknown preset {preset!r}")
    M = np.array(settings.matrix("model", "transition"))
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.size == 0:
        raise ConfigError("[model] transition must be a square matrix")
    L = M.shape[0]
    h = settings.float("model", "h")
    kind = settings.raw("model", "kind").lower()
    try:
        if kind == "ghil":
            keys = ("a", "b", "kappa", "omega", "sigma", "delay")
            vec = {k: _per_layer(settings, k, L) for k in keys}
            return presets.ghil_model(M, **vec, h=h)
        if kind == "ar":
            coeffs = settings.matrix("model", "coefficients")
            if len(coeffs) != L or len({len(c) for c in coeffs}) != 1:
                raise ConfigError(f"[model] coefficients needs {L} rows of equal length")
            return presets.ar_model(M, coeffs, _per_layer(settings, "sigma", L), h=h)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"[model] {exc}") from None
    raise ConfigError(f"[model] unknown kind {kind!r}")


def fit_template(settings: Settings, L: int | None = None) -> SwitchingModel:
    """Structure to fit: the configured model, or ``L`` copies of its first layer."""
    model = build_model(settings)
    if L is None and settings.is_set("fit", "layers"):
        L = settings.int("fit", "layers")
    if L is None or L == model.L:
        return model
    layer = model.layers[0]
    if isinstance(layer.dynamics, GhilLayer) and layer.delay > settings.float("fit", "delay_max"):
        layer = layer.updated(D=settings.float("fit", "delay_min"))
    return replicate_template(layer, L, model.h)


def fit_config(settings: Settings) -> FitConfig:
    stall = settings.int("ars", "stall") if settings.is_set("ars", "stall") else None
    try:
        return FitConfig(
            max_iter=settings.int("fit", "max_iter"),
            tol=settings.float("fit", "tol"),
            restarts=settings.int("fit", "restarts"),
            delay_bounds=(settings.float("fit", "delay_min"), settings.float("fit", "delay_max")),
            integer_delays=settings.bool("fit", "integer_delays"),
            init_boxes=settings.boxes("fit", "init_boxes"),
            search_bounds=settings.boxes("fit", "search_bounds"),
            ars_max_iter=settings.int("ars", "max_iter"),
            ars_contraction=settings.float("ars", "contraction"),
            ars_rmin_ratio=settings.float("ars", "rmin_ratio"),
            ars_stall=stall,
            sigma_floor=settings.float("fit", "sigma_floor"),
            seed=settings.seed(),
            jobs=settings.int("fit", "jobs"),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"[fit] {exc}") from None


def history_length(settings: Settings) -> int:
    if settings.is_set("simulate", "history_length"):
        return settings.int("simulate", "history_length")
    return math.ceil(settings.float("fit", "delay_max"))
