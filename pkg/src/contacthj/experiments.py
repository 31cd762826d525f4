"""Experiment drivers shared by the CLI and the acceptance tests."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import ConfigError, RunConfig
from .fd_oracle import FDConfig, fd_evolve
from .lagrangian import LagrangianModel, TrigPotential, legendre_to_hamiltonian, mechanical
from .lax_oleinik import GridFunction, evolve
from .repformulas import time_rescaling_check

STUDIES = ("constant_data", "lo_vs_fd", "semigroup", "time_rescaling")
ROUNDING_FLOOR = 1e-9  # inner solves stop at grad_tol 1e-6, so equivalent problems agree to ~1e-10


def initial_data(model: LagrangianModel, experiment: dict, resolution) -> GridFunction:
    """``phi = c + sum_k a_k cos(2 pi k.x/P) + b_k sin(...)`` from ``experiment.initial`` rows."""
    rows = experiment.get("initial", [])
    c = experiment.get("initial_constant", 0.0)
    if isinstance(c, bool) or not isinstance(c, (int, float)) or not math.isfinite(c):
        raise ConfigError("experiment.initial_constant", f"must be a finite number, got {c!r}")
    d = model.domain.dimension
    if not isinstance(rows, list) or any(not isinstance(r, list) or len(r) != d + 2 for r in rows):
        raise ConfigError("experiment.initial", f"must be a list of [k..., a, b] rows with {d + 2} entries")
    try:
        pot = TrigPotential.from_coefficients(model.domain, rows)
    except (TypeError, ValueError) as exc:
        raise ConfigError("experiment.initial", str(exc)) from None
    return GridFunction.from_function(model.domain, resolution, lambda x: float(c) + pot(x))


def exp_number(experiment: dict, key: str, default=None, positive=False, integer=False):
    if key not in experiment:
        if default is None:
            raise ConfigError(f"experiment.{key}", "missing")
        return default
    val = experiment[key]
    ok = not isinstance(val, bool) and isinstance(val, (int, float)) and math.isfinite(val)
    if integer:
        ok = ok and isinstance(val, int)
    if not ok:
        raise ConfigError(f"experiment.{key}", f"must be a finite {'integer' if integer else 'number'}, got {val!r}")
    if positive and val <= 0:
        raise ConfigError(f"experiment.{key}", f"must be positive, got {val!r}")
    return val


def fd_config(experiment: dict, resolution: int, t_end: float = 1.0) -> FDConfig:
    kwargs = {"resolution": resolution, "t_end": t_end}
    for key, name in (("fd_cfl", "cfl"), ("fd_steady_tol", "steady_tol"), ("fd_viscosity", "artificial_viscosity"),
                      ("fd_max_dt", "max_dt")):
        if key in experiment:
            kwargs[name] = exp_number(experiment, key, positive=True)
    try:
        return FDConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError("experiment.fd", str(exc)) from None


def fitted_slope(spacing, errors) -> float:
    """Least-squares slope of ``log(error)`` against ``log(spacing)``."""
    h = np.log(np.asarray(spacing, dtype=float))
    e = np.log(np.maximum(np.asarray(errors, dtype=float), np.finfo(float).tiny))
    return float(np.polyfit(h, e, 1)[0])


@dataclass
class StudyResult:
    """Error against the refinement parameter for one study.

    ``at_floor`` is set when every error sits below ``ROUNDING_FLOOR``: the
    two quantities agree to solver tolerance and the slope carries no information.
    """

    study: str
    parameter: str
    levels: list
    spacing: list
    errors: list
    slope: float
    at_floor: bool

    def rows(self):
        return [(lv, h, e) for lv, h, e in zip(self.levels, self.spacing, self.errors)]

    def order_at_least(self, p: float) -> bool:
        """``error_k <= error_0 (h_k/h_0)^p`` up to the rounding floor at every level."""
        e0, h0 = self.errors[0], self.spacing[0]
        return all(e <= e0 * (h / h0) ** p * (1 + 1e-9) + ROUNDING_FLOOR for h, e in zip(self.spacing, self.errors)) \
            and (self.at_floor or self.slope >= p)


def _ladder(experiment: dict):
    ladder = experiment.get("ladder")
    if not isinstance(ladder, list) or len(ladder) < 3 or \
            any(isinstance(v, bool) or not isinstance(v, int) or v < 2 for v in ladder):
        raise ConfigError("experiment.ladder", "needs at least 3 integer levels >= 2")
    return sorted(ladder)


def convergence_study(run: RunConfig) -> StudyResult:
    """Run ``experiment.study`` on every level of ``experiment.ladder``."""
    exp = run.experiment
    study = exp.get("study")
    if study not in STUDIES:
        raise ConfigError("experiment.study", f"must be one of {', '.join(STUDIES)}, got {study!r}")
    ladder = _ladder(exp)
    model, cfg = run.model, run.solver
    T = exp_number(exp, "T", default=0.5, positive=True)
    period = float(model.domain.periods[0])
    spacing, errors = [], []
    if study == "constant_data":
        # refinement in curve segments; the spatial grid plays no role for constant data
        c = exp_number(exp, "initial_constant", default=1.0)
        if model.lu_constant is None:
            raise ConfigError("model.family", "constant-data study needs a constant L_u (discounted) model")
        lam = -float(model.lu_constant)
        for N in ladder:
            lcfg = cfg.replace(curve_segments=N, substeps=1, resolution=4)
            phi = GridFunction.constant(model.domain, 4, c)
            u = evolve(model, phi, T, 1, lcfg).final
            spacing.append(T / N)
            errors.append(float(np.max(np.abs(u.values - c * math.exp(-lam * T)))))
        return _result(study, "curve_segments", ladder, spacing, errors)
    for n in ladder:
        lcfg = cfg.replace(resolution=n)
        phi = initial_data(model, exp, n)
        if study == "semigroup":
            u1 = evolve(model, phi, T, 1, lcfg).final
            u2 = evolve(model, phi, T, 2, lcfg).final
            err = float(np.max(np.abs(u1.values - u2.values)))
        elif study == "time_rescaling":
            default = -float(model.lu_constant) if model.lu_constant else 1.0
            lam = exp_number(exp, "rescale_lambda", default=default, positive=True)
            L0 = mechanical(model.domain, run.model_block.get("potential", []), run.model_block.get("kinetic"))
            err = time_rescaling_check(L0, lam, phi, T, lcfg).value
        else:
            lo = evolve(model, phi, T, int(exp_number(exp, "steps", default=1, positive=True, integer=True)),
                        lcfg).final
            fd = fd_evolve(legendre_to_hamiltonian(model), phi, fd_config(exp, n, T))
            err = float(np.max(np.abs(lo.values - fd.values)))
        spacing.append(period / n)
        errors.append(err)
    return _result(study, "resolution", ladder, spacing, errors)


def _result(study, parameter, ladder, spacing, errors):
    at_floor = max(errors) <= ROUNDING_FLOOR
    return StudyResult(study, parameter, list(ladder), spacing, errors, fitted_slope(spacing, errors), at_floor)


def random_points(model: LagrangianModel, count: int, seed: int, t_range=(0.2, 1.0)):
    """``count`` random ``(t, x)`` points with ``t`` uniform in ``t_range``."""
    rng = np.random.default_rng(seed)
    t = rng.uniform(*t_range, size=count)
    x = rng.uniform(0.0, 1.0, size=(count, model.domain.dimension)) * model.domain.periods
    return t, x


def parse_points(text: str, dimension: int):
    """``"t:x0[,x1];t:x0..."`` into arrays."""
    ts, xs = [], []
    for item in filter(None, (s.strip() for s in text.split(";"))):
        try:
            t, x = item.split(":")
            coords = [float(c) for c in x.split(",")]
            ts.append(float(t))
        except ValueError:
            raise ConfigError("--points", f"cannot parse point {item!r} (expected t:x0[,x1])") from None
        if len(coords) != dimension:
            raise ConfigError("--points", f"point {item!r} needs {dimension} coordinate(s)")
        xs.append(coords)
    if not ts:
        raise ConfigError("--points", "no points given")
    return np.asarray(ts), np.asarray(xs)


def stationary_sample_nodes(resolution: int, count: int, seed: int, domain) -> np.ndarray:
    """``count`` distinct random grid nodes (coordinates), sorted by index."""
    rng = np.random.default_rng(seed)
    n_total = resolution ** domain.dimension
    idx = np.sort(rng.choice(n_total, size=min(count, n_total), replace=False))
    grid = GridFunction.constant(domain, resolution, 0.0)
    return grid.nodes()[idx]

