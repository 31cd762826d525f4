"""Fundamental solution ``h_L`` by direct optimisation over piecewise-linear curves.

The objective for a curve with fixed endpoints is ``J = u_xi(t2)``, the
terminal value of the Caratheodory ODE.  Interior node positions are the
unknowns; gradients come from the discrete adjoint in :mod:`caratheodory`.
All curves of a batch (every start of every endpoint pair) are optimised
together.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .caratheodory import (
    DIVERGENCE_THRESHOLD,
    CaratheodoryTrajectory,
    Curve,
    DirectRHS,
    LinearizedRHS,
    adjoint_batch,
    frozen_stages,
    integrate_batch,
    solve_caratheodory,
    solve_linearized,
)
from .config import SolverConfig
from .lagrangian import DomainDescriptor, LagrangianModel
from .optimize import STATUS_NAMES, bfgs_batch

TIE_TOL = 1e-9


class HorizonError(ValueError):
    """Time horizon shorter than ``cfg.min_horizon``."""


class HerglotzError(RuntimeError):
    """No optimiser start converged; ``best`` is the best non-converged candidate."""

    def __init__(self, message, best=None, pair=None):
        super().__init__(message)
        self.best = best
        self.pair = pair


@dataclass(frozen=True)
class StartDiagnostic:
    label: str
    value: float
    grad_norm: float
    iterations: int
    status: str

    def as_dict(self) -> dict:
        return {"start": self.label, "value": self.value, "grad_norm": self.grad_norm,
                "iterations": self.iterations, "status": self.status}


@dataclass(frozen=True)
class HerglotzResult:
    """Minimiser of the Herglotz functional between two endpoints.

    ``value`` is the action ``u_xi(t2) - u0``; ``u_end`` is ``u_xi(t2)``.
    """

    value: float
    minimizer: Curve
    trajectory: CaratheodoryTrajectory
    stationarity_residual: float
    starts_tried: int
    converged: bool
    u0: float
    diagnostics: tuple = ()

    @property
    def u_end(self) -> float:
        return self.value + self.u0


# ---------------------------------------------------------------------------
# start curves


def winding_classes(dimension: int, max_winding: int) -> list[tuple[int, ...]]:
    rng = range(-max_winding, max_winding + 1)
    return sorted(itertools.product(rng, repeat=dimension), key=lambda k: (sum(map(abs, k)), k))


def straight_lifted(domain: DomainDescriptor, starts, ends, n_segments: int, winding) -> np.ndarray:
    """Straight lifted curves ``(P, N+1, d)`` from ``starts`` to ``ends`` plus ``winding`` periods."""
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    ends = np.atleast_2d(np.asarray(ends, dtype=float))
    x0 = domain.wrap(starts)
    x1 = x0 + domain.displacement(x0, ends) + np.asarray(winding, dtype=float) * domain.periods
    theta = np.linspace(0.0, 1.0, n_segments + 1)[None, :, None]
    return x0[:, None, :] + theta * (x1 - x0)[:, None, :]


def start_labels(dimension: int, cfg: SolverConfig) -> list[str]:
    labels = ["winding" + ",".join(str(k) for k in w) for w in winding_classes(dimension, cfg.max_winding)]
    return labels + [f"random{r}" for r in range(cfg.random_starts)]


def initial_curves(domain: DomainDescriptor, starts, ends, cfg: SolverConfig, rng) -> np.ndarray:
    """Multi-start set ``(P, S, N+1, d)``: one straight line per winding class, then random perturbations.

    Random starts perturb the shortest straight line by a few sine modes of
    amplitude ``cfg.start_amplitude * period``.
    """
    N = cfg.curve_segments
    classes = winding_classes(domain.dimension, cfg.max_winding)
    lines = [straight_lifted(domain, starts, ends, N, k) for k in classes]
    P = lines[0].shape[0]
    out = np.empty((P, len(classes) + cfg.random_starts, N + 1, domain.dimension))
    for j, z in enumerate(lines):
        out[:, j] = z
    if cfg.random_starts:
        theta = np.linspace(0.0, 1.0, N + 1)
        modes = np.stack([np.sin(k * np.pi * theta) / k for k in (1, 2, 3)])  # (3, N+1)
        coef = rng.standard_normal((P, cfg.random_starts, 3, domain.dimension))
        bump = np.einsum("prkd,kn->prnd", coef, modes) * (cfg.start_amplitude * domain.periods)
        out[:, len(classes):] = lines[0][:, None] + bump
    return out


# ---------------------------------------------------------------------------
# batched minimisation


def _tridiag_inverse(c):
    """Inverse of the interior stiffness matrix for segment weights ``c`` (shape ``(B, N)``)."""
    B, N = c.shape
    n = N - 1
    K = np.zeros((B, n, n))
    idx = np.arange(n)
    K[:, idx, idx] = c[:, :-1] + c[:, 1:]
    K[:, idx[:-1], idx[:-1] + 1] = -c[:, 1:-1]
    K[:, idx[:-1] + 1, idx[:-1]] = -c[:, 1:-1]
    return np.linalg.inv(K)


def preconditioner(h, n_segments: int, dimension: int, mass: float, weights=None) -> np.ndarray:
    """Inverse Hessian of the kinetic part ``sum_i w_i (mass/2h) |z_{i+1}-z_i|^2`` over interior nodes."""
    h = np.atleast_1d(np.asarray(h, dtype=float))
    B = h.size
    if n_segments < 2:
        return np.zeros((B, 0, 0))
    if weights is None:
        inv = _tridiag_inverse(np.ones((1, n_segments)))[0]
        base = np.kron(inv, np.eye(dimension))
        return (h / mass)[:, None, None] * base[None]
    c = mass * np.asarray(weights, dtype=float) / h[:, None]
    inv = _tridiag_inverse(c)
    return np.einsum("bij,kl->bikjl", inv, np.eye(dimension)).reshape(B, (n_segments - 1) * dimension, -1)


@dataclass
class CurveBatch:
    """Optimised curves: lifted nodes ``Z``, terminal values ``J = u(t2)`` and optimiser status."""

    Z: np.ndarray
    J: np.ndarray
    grad_norm: np.ndarray
    iterations: np.ndarray
    status: np.ndarray

    @property
    def converged(self) -> np.ndarray:
        return self.status == 0


def _objective(rhs, Zfix, t1, t2, u0, m):
    B, N1, d = Zfix.shape

    def fun(X, idx):
        Zf = Zfix[idx].copy()
        Zf[:, 1:-1] = X.reshape(len(idx), N1 - 2, d)
        sub = rhs.subset(idx)
        U, st = integrate_batch(sub, Zf, t1[idx], t2[idx], u0[idx], m, keep_stages=True)
        with np.errstate(invalid="ignore"):
            ok = np.all(np.isfinite(U), axis=1) & (np.max(np.abs(U), axis=1) <= DIVERGENCE_THRESHOLD)
        J = np.where(ok, U[:, -1], np.inf)
        g = np.zeros_like(X)
        if ok.any():
            G, _ = adjoint_batch(rhs.subset(idx[ok]), Zf[ok], t1[idx][ok], t2[idx][ok], U[ok], m, stages=st[ok])
            g[ok] = G[:, 1:-1].reshape(int(ok.sum()), -1)
        return J, g

    return fun


def minimize_curves(model: LagrangianModel, Z0, t1, t2, u0, cfg: SolverConfig, rhs=None, weights=None,
                    max_step=None) -> CurveBatch:
    """Minimise ``u(t2)`` over interior nodes of each lifted curve in ``Z0`` (endpoints fixed).

    ``rhs`` defaults to the Caratheodory right side of ``model``; pass a
    :class:`LinearizedRHS` for the frozen problem.  ``weights`` (per segment)
    shape the preconditioner for long weighted horizons.
    """
    Z0 = np.asarray(Z0, dtype=float)
    B, N1, d = Z0.shape
    t1 = np.broadcast_to(np.asarray(t1, dtype=float), (B,)).copy()
    t2 = np.broadcast_to(np.asarray(t2, dtype=float), (B,)).copy()
    u0 = np.broadcast_to(np.asarray(u0, dtype=float), (B,)).copy()
    rhs = DirectRHS(model) if rhs is None else rhs
    N = N1 - 1
    if max_step is None:
        max_step = 0.25 * float(np.min(model.domain.periods))
    out_Z = Z0.copy()
    out = CurveBatch(out_Z, np.empty(B), np.empty(B), np.zeros(B, dtype=int), np.zeros(B, dtype=int))

    def run(sl):
        idx = np.arange(sl.start, sl.stop)
        sub_rhs = rhs.subset(idx)
        fun = _objective(sub_rhs, Z0[sl], t1[sl], t2[sl], u0[sl], cfg.substeps)
        H0 = preconditioner((t2[sl] - t1[sl]) / N, N, d, model.mass,
                            None if weights is None else np.asarray(weights)[sl])
        res = bfgs_batch(fun, Z0[sl, 1:-1].reshape(len(idx), -1), H0, grad_tol=cfg.grad_tol,
                         max_iter=cfg.max_iter, max_step=max_step)
        out_Z[sl, 1:-1] = res.x.reshape(len(idx), N - 1, d)
        out.J[sl] = res.f
        out.grad_norm[sl] = res.grad_norm
        out.iterations[sl] = res.iterations
        out.status[sl] = res.status

    # cap the dense inverse-Hessian storage at about 128 MB per chunk
    nvar = max((N - 1) * d, 1)
    size = max(1, min(cfg.batch_size, (1 << 24) // (nvar * nvar)))
    chunks = [slice(a, min(a + size, B)) for a in range(0, B, size)]
    threads = cfg.worker_threads()
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, chunks))
    else:
        for sl in chunks:
            run(sl)
    return out


def select_best(values, Z, valid):
    """Index of the best start per problem: smallest value, ties within 1e-9 by lexicographic nodes.

    ``values`` and ``valid`` have shape ``(P, S)``; ``Z`` has shape ``(P, S, ...)``.
    Rows without any valid start return their smallest finite value (or 0).
    """
    vals = np.where(valid, values, np.inf)
    P, S = vals.shape
    none = ~np.isfinite(vals).any(axis=1)
    if none.any():
        fallback = np.where(np.isfinite(values), values, np.inf)
        vals[none] = fallback[none]
    best = np.min(vals, axis=1)
    cand = np.isfinite(vals) & (vals <= best[:, None] + TIE_TOL)
    cand[~cand.any(axis=1), 0] = True
    flat = Z.reshape(P, S, -1)
    rows = np.flatnonzero(cand.sum(axis=1) > 1)
    for j in range(flat.shape[2]):
        if rows.size == 0:
            break
        col = np.where(cand[rows], flat[rows, :, j], np.inf)
        cand[rows] &= col <= np.min(col, axis=1)[:, None]
        rows = rows[cand[rows].sum(axis=1) > 1]
    return np.argmax(cand, axis=1)


@dataclass
class PairSolution:
    """Best curve per endpoint pair plus every start's outcome."""

    u_end: np.ndarray
    curves: np.ndarray
    converged: np.ndarray
    best_index: np.ndarray
    starts: CurveBatch
    n_starts: int

    def start_curves(self) -> np.ndarray:
        P = self.u_end.size
        return self.starts.Z.reshape(P, self.n_starts, *self.starts.Z.shape[1:])


def solve_pairs(model: LagrangianModel, t1, t2, starts, ends, u0, cfg: SolverConfig, rng=None,
                initial=None, rhs=None) -> PairSolution:
    """Multi-start minimisation of ``u(t2)`` for ``P`` endpoint pairs at once.

    ``initial`` optionally supplies the start curves ``(P, S, N+1, d)``;
    otherwise :func:`initial_curves` generates them with ``rng``.
    """
    d = model.domain.dimension
    starts = np.atleast_2d(np.asarray(starts, dtype=float)).reshape(-1, d)
    ends = np.atleast_2d(np.asarray(ends, dtype=float)).reshape(-1, d)
    P = starts.shape[0]
    t1 = np.broadcast_to(np.asarray(t1, dtype=float), (P,))
    t2 = np.broadcast_to(np.asarray(t2, dtype=float), (P,))
    if np.any(t2 - t1 < cfg.min_horizon):
        raise HorizonError(f"horizon t2 - t1 = {float(np.min(t2 - t1))} below min_horizon {cfg.min_horizon}")
    u0 = np.broadcast_to(np.asarray(u0, dtype=float), (P,))
    if initial is None:
        rng = np.random.default_rng(cfg.seed) if rng is None else rng
        initial = initial_curves(model.domain, starts, ends, cfg, rng)
    S = initial.shape[1]
    flatZ = initial.reshape(P * S, *initial.shape[2:])
    rep = np.repeat(np.arange(P), S)
    batch_rhs = None if rhs is None else rhs.subset(rep)
    res = minimize_curves(model, flatZ, t1[rep], t2[rep], u0[rep], cfg, rhs=batch_rhs)
    J = res.J.reshape(P, S)
    ok = res.converged.reshape(P, S) & np.isfinite(J)
    best = select_best(J, res.Z.reshape(P, S, *flatZ.shape[1:]), ok)
    rows = np.arange(P)
    Zb = res.Z.reshape(P, S, *flatZ.shape[1:])[rows, best]
    return PairSolution(J[rows, best], Zb, ok.any(axis=1), best, res, S)


# ---------------------------------------------------------------------------
# single-pair interface


def adjoint_gradient(model: LagrangianModel, curve: Curve, traj: CaratheodoryTrajectory) -> np.ndarray:
    """``dJ/dnode`` for ``J = u(t_end)``, shape ``(N+1, d)`` (endpoint rows included)."""
    Z = curve.lifted()[None]
    U = np.asarray(traj.u_values, dtype=float)[None]
    G, _ = adjoint_batch(DirectRHS(model), Z, curve.t_start, curve.t_end, U, traj.substeps)
    return G[0]


def herglotz_residual(model: LagrangianModel, curve: Curve, traj: CaratheodoryTrajectory) -> float:
    """Sup-norm over interior nodes of the discrete residual of ``d/ds L_v = L_x + L_u L_v``.

    The residual at node ``i`` is the exact node gradient of the discrete
    objective divided by ``h * mu_i``, where ``mu_i = dJ/du(s_i)`` is the
    adjoint weight ``exp(int_{s_i}^{t2} L_u)``; as ``h -> 0`` this is
    ``-(d/ds L_v - L_x - L_u L_v)`` at ``s_i``.  It vanishes exactly at
    stationary points of the discretised problem.
    """
    if curve.n_segments < 2:
        return 0.0
    Z = curve.lifted()[None]
    U = np.asarray(traj.u_values, dtype=float)[None]
    G, _, mu = adjoint_batch(DirectRHS(model), Z, curve.t_start, curve.t_end, U, traj.substeps,
                             node_weights=True)
    r = G[0, 1:-1] / (curve.dt * mu[0, 1:-1, None])
    return float(np.max(np.abs(r)))


def _diagnostics(labels, batch: CurveBatch, u0):
    return tuple(
        StartDiagnostic(lab, float(J - u0), float(g), int(it), STATUS_NAMES[int(st)])
        for lab, J, g, it, st in zip(labels, batch.J, batch.grad_norm, batch.iterations, batch.status)
    )


def _finish(model, sol: PairSolution, t1, t2, u0, cfg, labels, linear_frozen=None):
    curve = Curve.from_lifted(model.domain, t1, t2, sol.curves[0])
    if linear_frozen is None:
        traj = solve_caratheodory(model, curve, u0, substeps=cfg.substeps)
    else:
        traj = solve_linearized(model, curve, linear_frozen, u0, substeps=cfg.substeps)
    result = HerglotzResult(
        value=float(traj.u_end - u0),
        minimizer=curve,
        trajectory=traj,
        stationarity_residual=herglotz_residual(model, curve, traj) if linear_frozen is None else float("nan"),
        starts_tried=sol.n_starts,
        converged=bool(sol.converged[0]),
        u0=float(u0),
        diagnostics=_diagnostics(labels, sol.starts, u0),
    )
    if not result.converged:
        raise HerglotzError(
            f"no start converged for x={curve.nodes[0].tolist()}, y={curve.nodes[-1].tolist()} "
            f"(best grad norm {float(np.min(sol.starts.grad_norm)):.3g})", best=result,
            pair=(curve.nodes[0], curve.nodes[-1]))
    return result


def fundamental_solution(model: LagrangianModel, t1: float, t2: float, x, y, u0: float, cfg: SolverConfig,
                         rng=None) -> HerglotzResult:
    """``h_L(t1, t2, x, y, u0)``: least action ``u(t2) - u0`` over curves from ``x`` at ``t1`` to ``y`` at ``t2``."""
    d = model.domain.dimension
    x = np.asarray(x, dtype=float).reshape(d)
    y = np.asarray(y, dtype=float).reshape(d)
    sol = solve_pairs(model, t1, t2, x[None], y[None], u0, cfg, rng=rng)
    return _finish(model, sol, t1, t2, u0, cfg, start_labels(d, cfg))


def linearized_fundamental_solution(model: LagrangianModel, t1: float, t2: float, x, y, u0: float,
                                    frozen: CaratheodoryTrajectory, cfg: SolverConfig,
                                    rng=None) -> HerglotzResult:
    """Least terminal value of the linearised ODE with ``u`` frozen along ``frozen``.

    The frozen curve itself is tried as an additional start.
    """
    d = model.domain.dimension
    N = cfg.curve_segments
    x = np.asarray(x, dtype=float).reshape(d)
    y = np.asarray(y, dtype=float).reshape(d)
    grid = Curve.straight(model.domain, t1, t2, x, y, N)
    ustar = frozen_stages(frozen, grid, cfg.substeps)
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    init = initial_curves(model.domain, x[None], y[None], cfg, rng)
    labels = start_labels(d, cfg)
    fc = frozen.curve
    if fc.n_segments == N and np.isclose(fc.t_start, t1) and np.isclose(fc.t_end, t2):
        fz = fc.lifted()
        fz = fz + (grid.lifted()[0] - fz[0])
        init = np.concatenate([fz[None, None], init], axis=1)
        labels = ["frozen"] + labels
    rhs = LinearizedRHS(model, ustar[None])
    sol = solve_pairs(model, t1, t2, x[None], y[None], u0, cfg, initial=init, rhs=rhs)
    return _finish(model, sol, t1, t2, u0, cfg, labels, linear_frozen=frozen)
