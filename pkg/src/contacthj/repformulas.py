"""Interchangeable representation formulas for the value function.

Evolutionary formulas minimise over grid starting points ``y`` a per-curve
quantity evaluated on the minimising curve from ``y`` to ``x``:

* ``I``   terminal value of the Caratheodory ODE (reference),
* ``II``  integrating-factor closed form with weight ``exp(int L_u)``,
* ``VI``  integral-mean splitting with weight ``exp(int mean L_u)``,
* ``VII`` splitting with an arbitrary bounded gauge ``F``,
* ``III`` the problem linearised about one minimiser with ``u`` frozen,
* ``DISC_E`` the discounted closed form (constant ``L_u`` only).

Stationary formulas integrate along backward calibrated curves assembled
from the argmin maps of the fixed-point iteration: ``IV`` (direct), ``V``
(linearised, re-minimised) and ``DISC_S`` (discounted closed form).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .caratheodory import (
    DirectRHS,
    GaugeFunction,
    LinearizedRHS,
    adjoint_batch,
    discounted_action_batch,
    gauge_batch,
    gronwall_bound_batch,
    hatLu_batch,
    integrate_batch,
    integrating_factor_batch,
    integrating_factor_parts,
)
from .config import SolverConfig
from .herglotz import HerglotzError, initial_curves, minimize_curves, solve_pairs, start_labels
from .lagrangian import LagrangianModel, TonelliLagrangian, make_discounted, make_time_rescaled
from .lax_oleinik import GridFunction, StationaryResult, evolve

FORMULA_IDS = ("I", "II", "III", "IV", "V", "VI", "VII", "DISC_E", "DISC_S")
DEFAULT_GAUGES = ("const:-1", "sin:1:1", "const:0")


class HorizonError(RuntimeError):
    """Tail certificate not reached within ``cfg.max_horizon``."""


@dataclass(frozen=True)
class FormulaReport:
    formula_id: str
    value: float
    inputs_digest: dict
    discrepancy_vs_reference: float
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.formula_id not in FORMULA_IDS:
            raise ValueError(f"unknown formula id {self.formula_id!r}")

    def row(self) -> dict:
        return {"formula_id": self.formula_id, "value": self.value,
                "discrepancy": self.discrepancy_vs_reference, **self.inputs_digest}


# ---------------------------------------------------------------------------
# evolutionary candidates


@dataclass
class CandidateSet:
    """Minimising curve from every grid node ``y`` to every point ``(t_p, x_p)``.

    Arrays are flattened over ``(point, node)`` pairs, point-major.
    """

    model: LagrangianModel
    phi: GridFunction
    t: np.ndarray
    x: np.ndarray
    nodes: np.ndarray
    Z: np.ndarray
    U: np.ndarray
    stages: np.ndarray
    substeps: int

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.t), len(self.nodes)

    @property
    def t_end(self) -> np.ndarray:
        return np.repeat(self.t, len(self.nodes))

    def batch(self, fn, *args, rule="simpson"):
        vals = fn(self.model, self.Z, 0.0, self.t_end, self.U, self.substeps, *args, rule=rule)
        return np.asarray(vals).reshape(self.shape)

    def reference(self) -> np.ndarray:
        return self.U[:, -1].reshape(self.shape)


def _points(model, t, x):
    d = model.domain.dimension
    t = np.atleast_1d(np.asarray(t, dtype=float))
    x = np.asarray(x, dtype=float).reshape(-1, d)
    if len(t) == 1 and len(x) > 1:
        t = np.repeat(t, len(x))
    if len(t) != len(x):
        raise ValueError("need one time per point")
    return t, x


def candidate_set(model: LagrangianModel, phi: GridFunction, t, x, cfg: SolverConfig, rng=None) -> CandidateSet:
    """Solve the inner problems of the evolutionary formulas at points ``(t_p, x_p)``."""
    t, x = _points(model, t, x)
    if np.any(t < cfg.min_horizon):
        raise ValueError(f"t must be >= min_horizon {cfg.min_horizon}")
    nodes = phi.nodes()
    P, n = len(t), len(nodes)
    starts = np.tile(nodes, (P, 1))
    ends = np.repeat(x, n, axis=0)
    tt = np.repeat(t, n)
    u0 = np.tile(phi.flat, P)
    sol = solve_pairs(model, 0.0, tt, starts, ends, u0, cfg, rng=rng)
    if not sol.converged.all():
        k = int(np.flatnonzero(~sol.converged)[0])
        raise HerglotzError(f"inner solve failed: y={starts[k].tolist()} -> x={ends[k].tolist()} at t={tt[k]}",
                            pair=(starts[k], ends[k]))
    U, stages = integrate_batch(DirectRHS(model), sol.curves, 0.0, tt, u0, cfg.substeps, keep_stages=True)
    return CandidateSet(model, phi, t, x, nodes, sol.curves, U, stages, cfg.substeps)


def _digest(cs: CandidateSet, p: int, j: int) -> dict:
    out = {"t": float(cs.t[p])}
    for a, c in enumerate(cs.x[p]):
        out[f"x{a}"] = float(c)
    out["y_index"] = int(j)
    for a, c in enumerate(cs.nodes[j]):
        out[f"y{a}"] = float(c)
    return out


def _reports(fid, cs, values, reference, extras=None):
    arg = np.argmin(values, axis=1)
    rows = np.arange(len(arg))
    best = values[rows, arg]
    return [FormulaReport(fid, float(best[p]), _digest(cs, p, int(arg[p])), float(abs(best[p] - reference[p])),
                          dict(extras[p]) if extras else {})
            for p in range(len(arg))]


def _reference(cs):
    return np.min(cs.reference(), axis=1)


def _cs(model, phi, t, x, cfg, candidates):
    return candidates if candidates is not None else candidate_set(model, phi, t, x, cfg)


def rep_I(model, phi, t, x, cfg, candidates=None) -> FormulaReport:
    """Reference: ``min_y u_xi(t)`` over minimising curves from each grid node."""
    return rep_I_batch(_cs(model, phi, t, x, cfg, candidates))[0]


def rep_I_batch(cs: CandidateSet) -> list[FormulaReport]:
    ref = _reference(cs)
    return _reports("I", cs, cs.reference(), ref)


def rep_II_batch(cs: CandidateSet, rule="simpson") -> list[FormulaReport]:
    return _reports("II", cs, cs.batch(integrating_factor_batch, rule=rule), _reference(cs))


def rep_II(model, phi, t, x, cfg, candidates=None) -> FormulaReport:
    """Integrating-factor form ``exp(int L_u) phi(y) + int exp(int_s^t L_u)(L - u L_u) ds``."""
    return rep_II_batch(_cs(model, phi, t, x, cfg, candidates), cfg.quadrature)[0]


def rep_VI_batch(cs: CandidateSet, rule="simpson") -> list[FormulaReport]:
    vals = cs.batch(hatLu_batch, rule=rule)
    bound = cs.batch(gronwall_bound_batch, rule=rule)
    ratio = np.abs(cs.reference()) / bound
    worst = np.max(ratio, axis=1)
    if np.any(worst > 1.0 + 1e-9):
        raise AssertionError(f"a-priori bound violated (|u|/bound = {float(np.max(worst)):.6g})")
    extras = [{"apriori_max_ratio": float(w)} for w in worst]
    return _reports("VI", cs, vals, _reference(cs), extras)


def rep_VI(model, phi, t, x, cfg, candidates=None) -> FormulaReport:
    """Integral-mean splitting; also checks the Gronwall a-priori bound on every candidate."""
    return rep_VI_batch(_cs(model, phi, t, x, cfg, candidates), cfg.quadrature)[0]


def rep_VII_batch(cs: CandidateSet, F, rule="simpson") -> list[FormulaReport]:
    gauge = GaugeFunction.parse(F)
    vals = cs.batch(gauge_batch, gauge, rule=rule)
    reps = _reports("VII", cs, vals, _reference(cs), [{"gauge": gauge.label}] * len(cs.t))
    return reps


def rep_VII(model, phi, t, x, F, cfg, candidates=None) -> FormulaReport:
    """Splitting with gauge ``F`` (a :class:`GaugeFunction` or spec such as ``"const:-1"``)."""
    return rep_VII_batch(_cs(model, phi, t, x, cfg, candidates), F, cfg.quadrature)[0]


def disc_E_batch(cs: CandidateSet, rule="simpson") -> list[FormulaReport]:
    """Discounted closed form ``exp(-lam t) phi(y) + int exp(lam (s - t)) L0`` on the same curves."""
    vals = cs.batch(discounted_action_batch, rule=rule)
    return _reports("DISC_E", cs, vals, _reference(cs))


def rep_III_batch(cs: CandidateSet, cfg: SolverConfig, frozen_index=None, rng=None) -> list[FormulaReport]:
    """Linearised problem with ``u`` frozen along one minimiser ``xi*`` per point.

    ``frozen_index[p]`` selects the grid node whose curve serves as ``xi*``
    (default: the reference argmin).  Curves ``eta`` run from the same start
    node to ``x_p``; ``xi*`` itself is included among the starts.
    """
    model = cs.model
    if "L5" not in model.declared:
        raise ValueError("linearised formula requires a model declaring L5")
    P, n = cs.shape
    ref_vals = cs.reference()
    j = np.argmin(ref_vals, axis=1) if frozen_index is None else np.asarray(frozen_index, dtype=int)
    flat = np.arange(P) * n + j
    ystar = cs.nodes[j]
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    init = initial_curves(model.domain, ystar, cs.x, cfg, rng)
    init = np.concatenate([cs.Z[flat][:, None], init], axis=1)
    rhs = LinearizedRHS(model, cs.stages[flat])
    u0 = cs.phi.flat[j]
    sol = solve_pairs(model, 0.0, cs.t, ystar, cs.x, u0, cfg, initial=init, rhs=rhs)
    if not sol.converged.all():
        p = int(np.flatnonzero(~sol.converged)[0])
        raise HerglotzError(f"linearised solve failed at point {p}")
    ref = _reference(cs)
    labels = ["frozen"] + start_labels(model.domain.dimension, cfg)
    out = []
    for p in range(P):
        dg = _digest(cs, p, int(j[p]))
        ex = {"frozen_value": float(ref_vals[p, j[p]]), "best_start": labels[int(sol.best_index[p])]}
        out.append(FormulaReport("III", float(sol.u_end[p]), dg, float(abs(sol.u_end[p] - ref[p])), ex))
    return out


def rep_III(model, phi, t, x, cfg, candidates=None, frozen_index=None) -> FormulaReport:
    cs = _cs(model, phi, t, x, cfg, candidates)
    fi = None if frozen_index is None else [frozen_index]
    return rep_III_batch(cs, cfg, fi)[0]


# ---------------------------------------------------------------------------
# stationary formulas


@dataclass
class CalibratedCurves:
    """Backward calibrated curves ``xi: [-T_inf, 0] -> M`` ending at sample nodes."""

    node_index: np.ndarray
    Z: np.ndarray
    horizon: float
    U: np.ndarray
    stages: np.ndarray
    u_start: np.ndarray
    factor: np.ndarray
    integral: np.ndarray
    delta_hat: np.ndarray
    tail_bound: float
    substeps: int


def node_indices(grid: GridFunction, x) -> np.ndarray:
    """Flat indices of the grid nodes at coordinates ``x`` (must be nodes)."""
    d = grid.domain.dimension
    x = grid.domain.wrap(np.asarray(x, dtype=float).reshape(-1, d))
    pos = x / grid.spacing
    idx = np.rint(pos).astype(int) % np.asarray(grid.resolution)
    if np.any(np.abs(pos - np.rint(pos)) > 1e-6):
        raise ValueError("stationary formulas are evaluated at grid nodes only")
    return np.ravel_multi_index(tuple(idx.T), grid.resolution)


def _assemble(stat: StationaryResult, start_idx, K):
    nodes = stat.solution.nodes()
    pieces_all = stat.curves  # (n, N+1, d): from argmin[i] to node i
    B = len(start_idx)
    N = pieces_all.shape[1] - 1
    d = pieces_all.shape[2]
    Z = np.empty((B, K * N + 1, d))
    cur = np.asarray(start_idx)
    end = nodes[cur].copy()
    for k in range(K):
        piece = pieces_all[cur]
        piece = piece + (end - piece[:, -1])[:, None, :]
        lo, hi = (K - k - 1) * N, (K - k) * N
        Z[:, lo:hi + 1] = piece
        end = piece[:, 0]
        cur = stat.argmin[cur]
    return Z, cur


def backward_calibrated(model: LagrangianModel, stat: StationaryResult, x, cfg: SolverConfig) -> CalibratedCurves:
    """Concatenate argmin curves backward from each ``x`` until the tail certificate holds.

    The horizon is the smallest multiple ``K * Delta`` with
    ``exp(-delta_hat K Delta) ||u|| < tail_tol``, ``delta_hat`` being the
    minimum of ``-L_u`` measured along the assembled trajectories.
    """
    if "L6" not in model.declared:
        raise ValueError("stationary formulas require a model declaring L6")
    idx = node_indices(stat.solution, x)
    delta = stat.step
    umax = float(np.max(np.abs(stat.solution.values)))
    K_max = max(1, int(math.floor(cfg.max_horizon / delta + 1e-9)))
    K = min(K_max, max(1, int(math.ceil(5.0 / delta))))
    m = cfg.substeps
    while True:
        Z, far = _assemble(stat, idx, K)
        T = K * delta
        u_start = stat.solution.flat[far]
        U, stages = integrate_batch(DirectRHS(model), Z, -T, 0.0, u_start, m, keep_stages=True)
        factor, integral, dh = integrating_factor_parts(model, Z, -T, 0.0, U, m, cfg.quadrature)
        dmin = float(np.min(dh))
        if dmin <= 0:
            raise ValueError(f"measured decay rate min(-L_u) = {dmin:.3g} <= 0 along a calibrated curve")
        need = 1 if umax == 0 else int(math.ceil(math.log(umax / cfg.tail_tol) / (dmin * delta)))
        if need <= K:
            break
        if K == K_max:
            raise HorizonError(f"tail certificate needs horizon {need * delta:g} > max_horizon {cfg.max_horizon:g}")
        K = min(need, K_max)
    tail = math.exp(-dmin * K * delta) * umax
    return CalibratedCurves(idx, Z, K * delta, U, stages, u_start, factor, integral, dh, tail, m)


def _stationary_digest(stat, cc, b):
    out = {"node_index": int(cc.node_index[b])}
    for a, c in enumerate(stat.solution.nodes()[cc.node_index[b]]):
        out[f"x{a}"] = float(c)
    out["horizon"] = cc.horizon
    return out


def rep_IV(model: LagrangianModel, stat: StationaryResult, x, cfg: SolverConfig,
           calibrated: CalibratedCurves | None = None) -> list[FormulaReport]:
    """Truncated weighted integral along backward calibrated curves at grid nodes ``x``.

    Each report carries the tail certificate ``exp(-delta_hat T) ||u||``
    (``tail_bound``) and the exact dropped term ``exp(int L_u) |u(xi(-T))|``.
    """
    cc = backward_calibrated(model, stat, x, cfg) if calibrated is None else calibrated
    u = stat.solution.flat[cc.node_index]
    out = []
    for b in range(len(cc.node_index)):
        ex = {"tail_bound": cc.tail_bound, "dropped_term": float(cc.factor[b] * abs(cc.u_start[b])),
              "delta_hat": float(cc.delta_hat[b]), "trajectory_end": float(cc.U[b, -1]),
              "fixed_point": float(u[b])}
        out.append(FormulaReport("IV", float(cc.integral[b]), _stationary_digest(stat, cc, b),
                                 float(abs(cc.integral[b] - u[b])), ex))
    return out


def disc_S(model: LagrangianModel, stat: StationaryResult, x, cfg: SolverConfig,
           calibrated: CalibratedCurves | None = None) -> list[FormulaReport]:
    """Discounted closed form ``int_{-T}^0 exp(lam s) L0`` along the calibrated curves."""
    cc = backward_calibrated(model, stat, x, cfg) if calibrated is None else calibrated
    vals = discounted_action_batch(model, cc.Z, -cc.horizon, 0.0, np.zeros_like(cc.U), cc.substeps, cfg.quadrature)
    u = stat.solution.flat[cc.node_index]
    return [FormulaReport("DISC_S", float(vals[b]), _stationary_digest(stat, cc, b), float(abs(vals[b] - u[b])))
            for b in range(len(vals))]


def rep_V(model: LagrangianModel, stat: StationaryResult, x, cfg: SolverConfig,
          calibrated: CalibratedCurves | None = None) -> list[FormulaReport]:
    """Re-minimise the linearised (frozen-``u``) integrand over curves with the calibrated endpoints.

    The calibrated curve is the optimiser start; ``frozen_reproduction`` in
    the extras is the linearised value of the unmodified calibrated curve
    minus the ``IV`` value (zero up to rounding).
    """
    if "L5" not in model.declared:
        raise ValueError("linearised formula requires a model declaring L5")
    cc = backward_calibrated(model, stat, x, cfg) if calibrated is None else calibrated
    B = len(cc.node_index)
    rhs = LinearizedRHS(model, cc.stages)
    m = cc.substeps
    zero = np.zeros(B)
    V0 = integrate_batch(rhs, cc.Z, -cc.horizon, 0.0, zero, m)
    G, _, mu = adjoint_batch(rhs, cc.Z, -cc.horizon, 0.0, V0, m, node_weights=True)
    weights = 0.5 * (mu[:, 1:] + mu[:, :-1])
    res = minimize_curves(model, cc.Z, -cc.horizon, 0.0, zero, cfg, rhs=rhs, weights=weights)
    if not res.converged.all():
        b = int(np.flatnonzero(~res.converged)[0])
        raise HerglotzError(f"linearised stationary solve failed at node {int(cc.node_index[b])} "
                            f"(grad norm {res.grad_norm[b]:.3g})")
    ref = cc.integral
    out = []
    for b in range(B):
        ex = {"frozen_reproduction": float(V0[b, -1] - ref[b]), "iterations": int(res.iterations[b]),
              "rep_IV": float(ref[b])}
        out.append(FormulaReport("V", float(res.J[b]), _stationary_digest(stat, cc, b),
                                 float(abs(res.J[b] - ref[b])), ex))
    return out


# ---------------------------------------------------------------------------
# orchestration


def compare_formulas(model: LagrangianModel, phi: GridFunction, t, x, cfg: SolverConfig, gauges=DEFAULT_GAUGES,
                     linearized: bool | None = None) -> tuple[list[FormulaReport], dict]:
    """Evaluate every applicable evolutionary formula at the points ``(t_p, x_p)``.

    Returns the reports (point-major) and the maximum absolute discrepancy of
    each formula against ``I`` (``linearized`` defaults to whether the model
    declares L5).
    """
    cs = candidate_set(model, phi, t, x, cfg)
    rule = cfg.quadrature
    groups = [rep_I_batch(cs), rep_II_batch(cs, rule), rep_VI_batch(cs, rule)]
    groups += [rep_VII_batch(cs, F, rule) for F in gauges]
    if model.lu_constant is not None:
        groups.append(disc_E_batch(cs, rule))
    if linearized is None:
        linearized = "L5" in model.declared
    if linearized:
        groups.append(rep_III_batch(cs, cfg))
    reports = [g[p] for p in range(len(cs.t)) for g in groups]
    summary = {}
    for r in reports:
        key = r.formula_id if r.formula_id != "VII" else f"VII[{r.extras['gauge']}]"
        rel = r.discrepancy_vs_reference / (1.0 + abs(r.value))
        cur = summary.setdefault(key, {"max_abs": 0.0, "max_rel": 0.0})
        cur["max_abs"] = max(cur["max_abs"], r.discrepancy_vs_reference)
        cur["max_rel"] = max(cur["max_rel"], rel)
    return reports, summary


def time_rescaling_check(L0: TonelliLagrangian, lam: float, phi: GridFunction, T: float, cfg: SolverConfig,
                         steps: int = 1) -> FormulaReport:
    """Compare ``v(T)`` for ``L = exp(lam s) L0`` against ``exp(lam T) u(T)`` for ``L0 - lam u``.

    ``value`` and ``discrepancy_vs_reference`` both hold the sup-norm defect.
    """
    lam = float(lam)
    mu = make_discounted(L0, lam)
    mv = make_time_rescaled(L0, lam, s_max=max(10.0, float(T)))
    u = evolve(mu, phi, T, steps, cfg).final
    v = evolve(mv, phi, T, steps, cfg).final
    diff = float(np.max(np.abs(v.values - math.exp(lam * T) * u.values)))
    digest = {"check": "time_rescaling", "lambda": lam, "T": float(T), "resolution": list(phi.resolution),
              "steps": int(steps)}
    return FormulaReport("DISC_E", diff, digest, diff, {"u": u, "v": v})
