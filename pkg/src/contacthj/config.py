"""Solver configuration and its TOML loader."""

from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, field
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .lagrangian import DomainDescriptor, make_discounted, make_nonlinear_concave, make_time_rescaled, mechanical

THREADS_ENV = "CONTACTHJ_THREADS"


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class SolverConfig:
    seed: int
    resolution: int | None = None
    curve_segments: int = 32
    substeps: int = 8
    grad_tol: float = 1e-6
    max_iter: int = 200
    min_horizon: float = 1e-3
    max_winding: int = 1
    random_starts: int = 4
    start_amplitude: float = 0.1
    stationary_step: float = 0.5
    fp_tol: float = 1e-6
    max_fp_iter: int = 500
    tail_tol: float = 1e-5
    max_horizon: float = 50.0
    quadrature: str = "simpson"
    batch_size: int = 8192
    threads: int = 1

    def __post_init__(self):
        for key in ("grad_tol", "min_horizon", "stationary_step", "fp_tol", "tail_tol", "max_horizon",
                    "start_amplitude"):
            val = getattr(self, key)
            if not (isinstance(val, (int, float)) and math.isfinite(val) and val > 0):
                raise ConfigError(key, f"must be a positive finite number, got {val!r}")
        for key, lo in (("curve_segments", 1), ("substeps", 1), ("max_iter", 1), ("max_fp_iter", 1),
                        ("batch_size", 1), ("threads", 1), ("max_winding", 0), ("random_starts", 0)):
            val = getattr(self, key)
            if not isinstance(val, int) or isinstance(val, bool) or val < lo:
                raise ConfigError(key, f"must be an integer >= {lo}, got {val!r}")
        if self.resolution is not None and (not isinstance(self.resolution, int) or self.resolution < 2):
            raise ConfigError("resolution", f"must be an integer >= 2, got {self.resolution!r}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError("seed", f"must be an integer, got {self.seed!r}")
        if self.quadrature not in ("simpson", "trapezoid"):
            raise ConfigError("quadrature", "must be 'simpson' or 'trapezoid'")

    def grid_resolution(self, dimension: int) -> int:
        if self.resolution is not None:
            return self.resolution
        return 64 if dimension == 1 else 32

    def worker_threads(self) -> int:
        env = os.environ.get(THREADS_ENV)
        if env:
            try:
                return max(1, int(env))
            except ValueError:
                raise ConfigError(THREADS_ENV, f"must be an integer, got {env!r}") from None
        return self.threads

    def replace(self, **changes) -> "SolverConfig":
        return dataclasses.replace(self, **changes)


SOLVER_KEYS = {f.name for f in dataclasses.fields(SolverConfig)}
MODEL_KEYS = {"family", "potential", "lambda", "eps", "dimension", "period", "kinetic", "rate", "s_max"}


@dataclass
class RunConfig:
    """Parsed config file: model, solver settings and experiment parameters."""

    model: Any
    model_block: dict
    solver: SolverConfig
    experiment: dict = field(default_factory=dict)
    output: str | None = None


def _number(block, key, prefix, default=None, positive=False):
    if key not in block:
        if default is None:
            raise ConfigError(f"{prefix}{key}", "missing")
        return default
    val = block[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)) or not math.isfinite(val):
        raise ConfigError(f"{prefix}{key}", f"must be a finite number, got {val!r}")
    if positive and val <= 0:
        raise ConfigError(f"{prefix}{key}", f"must be positive, got {val!r}")
    return float(val)


def build_model(block: dict):
    """Model from a ``[model]`` table."""
    unknown = set(block) - MODEL_KEYS
    if unknown:
        raise ConfigError(f"model.{sorted(unknown)[0]}", "unknown key")
    dim = block.get("dimension", 1)
    if dim not in (1, 2):
        raise ConfigError("model.dimension", f"must be 1 or 2, got {dim!r}")
    period = block.get("period", 1.0)
    periods = period if isinstance(period, list) else [period] * dim
    if len(periods) != dim:
        raise ConfigError("model.period", "needs one entry per axis")
    for p in periods:
        if isinstance(p, bool) or not isinstance(p, (int, float)) or not p > 0:
            raise ConfigError("model.period", f"must be positive, got {p!r}")
    domain = DomainDescriptor(dimension=dim, period=tuple(float(p) for p in periods))
    rows = block.get("potential", [])
    if not isinstance(rows, list):
        raise ConfigError("model.potential", "must be a list of [k..., a, b] rows")
    for row in rows:
        if not isinstance(row, list) or len(row) != dim + 2:
            raise ConfigError("model.potential", f"each row needs {dim + 2} entries, got {row!r}")
    kinetic = block.get("kinetic")
    try:
        L0 = mechanical(domain, rows, kinetic=kinetic)
    except (TypeError, ValueError) as exc:
        raise ConfigError("model.potential", str(exc)) from None
    family = block.get("family")
    lam = _number(block, "lambda", "model.", default=0.0)
    try:
        if family == "discounted":
            return make_discounted(L0, lam)
        if family == "nonlinear_concave":
            return make_nonlinear_concave(L0, lam, _number(block, "eps", "model.", default=0.0))
        if family == "time_rescaled":
            rate = _number(block, "rate", "model.", default=lam)
            return make_time_rescaled(L0, rate, s_max=_number(block, "s_max", "model.", default=10.0,
                                                                positive=True))
    except ValueError as exc:
        raise ConfigError("model.lambda", str(exc)) from None
    raise ConfigError("model.family", f"unknown family {family!r}")


def parse_config(data: dict, require_seed: bool = True) -> RunConfig:
    if "model" not in data or not isinstance(data["model"], dict):
        raise ConfigError("model", "missing [model] table")
    model = build_model(data["model"])
    solver_block = data.get("solver", {})
    if not isinstance(solver_block, dict):
        raise ConfigError("solver", "must be a table")
    unknown = set(solver_block) - SOLVER_KEYS
    if unknown:
        raise ConfigError(f"solver.{sorted(unknown)[0]}", "unknown key")
    if require_seed and "seed" not in solver_block:
        raise ConfigError("solver.seed", "missing (a fixed seed is required)")
    try:
        solver = SolverConfig(**{"seed": 0, **solver_block})
    except ConfigError as exc:
        raise ConfigError(f"solver.{exc.key}", str(exc).split(": ", 1)[-1]) from None
    experiment = data.get("experiment", {})
    if not isinstance(experiment, dict):
        raise ConfigError("experiment", "must be a table")
    out = data.get("output")
    if out is not None and not isinstance(out, str):
        raise ConfigError("output", "must be a path string")
    return RunConfig(model=model, model_block=dict(data["model"]), solver=solver,
                     experiment=dict(experiment), output=out)


def load_config(path, require_seed: bool = True) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("<file>", f"TOML syntax error: {exc}") from None
    except OSError as exc:
        raise ConfigError("<file>", str(exc)) from None
    return parse_config(data, require_seed=require_seed)
