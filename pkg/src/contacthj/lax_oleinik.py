"""Lax-Oleinik operator on periodic grids, evolution and the stationary fixed point."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import SolverConfig
from .herglotz import HerglotzError, initial_curves, solve_pairs, winding_classes
from .lagrangian import DomainDescriptor, LagrangianModel


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Node values on a uniform periodic grid (node ``i`` sits at ``i * period / n``)."""

    domain: DomainDescriptor
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim != self.domain.dimension:
            raise ValueError(f"values must have {self.domain.dimension} axes, got shape {vals.shape}")
        if min(vals.shape) < 2:
            raise ValueError(f"resolution must be >= 2 per axis, got {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("grid values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def resolution(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def spacing(self) -> np.ndarray:
        return self.domain.periods / np.asarray(self.resolution)

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def nodes(self) -> np.ndarray:
        """Node coordinates ``(n_total, d)`` in C order."""
        axes = [np.arange(n) * h for n, h in zip(self.resolution, self.spacing)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=-1)

    def with_flat(self, flat) -> "GridFunction":
        return GridFunction(self.domain, np.asarray(flat, dtype=float).reshape(self.resolution))

    def __call__(self, x) -> np.ndarray:
        """Periodic multilinear interpolation at points ``x`` of shape ``(..., d)``."""
        x = np.asarray(x, dtype=float)
        d = self.domain.dimension
        if d == 1 and x.ndim == 0:
            x = x[None]
        pos = self.domain.wrap(x) / self.spacing
        base = np.floor(pos).astype(int)
        frac = pos - base
        res = np.asarray(self.resolution)
        out = 0.0
        for corner in np.ndindex(*(2,) * d):
            c = np.asarray(corner)
            w = np.prod(np.where(c == 1, frac, 1.0 - frac), axis=-1)
            idx = tuple(((base[..., a] + c[a]) % res[a]) for a in range(d))
            out = out + w * self.values[idx]
        return out

    @classmethod
    def from_function(cls, domain: DomainDescriptor, resolution, fn) -> "GridFunction":
        res = (resolution,) * domain.dimension if np.isscalar(resolution) else tuple(resolution)
        g = cls(domain, np.zeros(res))
        return g.with_flat(np.asarray(fn(g.nodes()), dtype=float).reshape(-1))

    @classmethod
    def constant(cls, domain: DomainDescriptor, resolution, c: float) -> "GridFunction":
        return cls.from_function(domain, resolution, lambda x: np.full(len(x), float(c)))


@dataclass
class StepResult:
    """One application of the operator with its argmin data.

    ``curves[i]`` is the lifted minimising curve from node ``argmin[i]`` to
    node ``i``; ``start_curves`` keeps every optimiser start's end state for
    warm starting the next step.
    """

    solution: GridFunction
    argmin: np.ndarray
    curves: np.ndarray
    candidates: np.ndarray
    start_curves: np.ndarray | None = None


@dataclass
class _Kernel:
    J0: np.ndarray
    curves: np.ndarray
    start_curves: np.ndarray


@dataclass
class KernelCache:
    """Fundamental-solution kernels for models with constant ``L_u``.

    For such models ``u(t2) = R * u0 + J0`` along every curve, with ``R`` the
    RK4 amplification factor, so the minimising curve does not depend on
    ``u0``.  Autonomous models share kernels between steps of equal length.
    """

    store: dict = field(default_factory=dict)
    hits: int = 0

    def key(self, model, phi, t1, t2):
        tk = (round(t2 - t1, 12),) if model.autonomous else (round(t1, 12), round(t2, 12))
        return (id(model), phi.resolution) + tk


def amplification(model: LagrangianModel, t1: float, t2: float, cfg: SolverConfig) -> float:
    """Exact RK4 map ``u0 -> u(t2)`` coefficient for constant ``L_u``."""
    c = float(model.lu_constant)
    M = cfg.curve_segments * cfg.substeps
    z = c * (t2 - t1) / M
    return float((1.0 + z + z * z / 2.0 + z ** 3 / 6.0 + z ** 4 / 24.0) ** M)


def _pair_arrays(phi: GridFunction):
    nodes = phi.nodes()
    n = len(nodes)
    ends = np.repeat(nodes, n, axis=0)  # x index major
    starts = np.tile(nodes, (n, 1))
    return nodes, starts, ends


def _warm_initial(model, starts, ends, cfg, rng, warm):
    init = initial_curves(model.domain, starts, ends, cfg, rng)
    if warm is not None and warm.shape == init.shape:
        nc = len(winding_classes(model.domain.dimension, cfg.max_winding))
        init[:, :nc] = warm[:, :nc]
    return init


def _raise_unconverged(nodes, n, converged):
    bad = np.flatnonzero(~converged)
    i, j = divmod(int(bad[0]), n)
    raise HerglotzError(
        f"inner solve failed for {bad.size} pair(s); first: y={nodes[j].tolist()} -> x={nodes[i].tolist()}",
        pair=(nodes[j], nodes[i]))


def lax_oleinik_step(model: LagrangianModel, phi: GridFunction, t1: float, t2: float, cfg: SolverConfig,
                     cache: KernelCache | None = None, warm=None, rng=None) -> StepResult:
    """``(T phi)(x_i) = min_j phi(y_j) + h_L(t1, t2, y_j, x_i, phi(y_j))`` over grid nodes.

    Ties in the minimum go to the smallest ``j``.
    """
    if phi.domain != model.domain:
        raise ValueError("grid function and model live on different domains")
    nodes, starts, ends = _pair_arrays(phi)
    n = len(nodes)
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    phiv = phi.flat
    if model.lu_constant is not None:
        cache = KernelCache() if cache is None else cache
        key = cache.key(model, phi, t1, t2)
        kern = cache.store.get(key)
        if kern is None:
            init = _warm_initial(model, starts, ends, cfg, rng, warm)
            sol = solve_pairs(model, t1, t2, starts, ends, 0.0, cfg, initial=init)
            if not sol.converged.all():
                _raise_unconverged(nodes, n, sol.converged)
            kern = _Kernel(sol.u_end.reshape(n, n), sol.curves.reshape(n, n, *sol.curves.shape[1:]),
                           sol.start_curves())
            cache.store[key] = kern
        else:
            cache.hits += 1
        cand = amplification(model, t1, t2, cfg) * phiv[None, :] + kern.J0
        curves_all, start_curves = kern.curves, kern.start_curves
    else:
        init = _warm_initial(model, starts, ends, cfg, rng, warm)
        sol = solve_pairs(model, t1, t2, starts, ends, np.tile(phiv, n), cfg, initial=init)
        if not sol.converged.all():
            _raise_unconverged(nodes, n, sol.converged)
        cand = sol.u_end.reshape(n, n)
        curves_all = sol.curves.reshape(n, n, *sol.curves.shape[1:])
        start_curves = sol.start_curves()
    arg = np.argmin(cand, axis=1)
    rows = np.arange(n)
    return StepResult(phi.with_flat(cand[rows, arg]), arg, curves_all[rows, arg], cand, start_curves)


def apply_T(model: LagrangianModel, phi: GridFunction, t1: float, t2: float, cfg: SolverConfig,
            cache: KernelCache | None = None) -> GridFunction:
    """Lax-Oleinik operator ``T_{t1}^{t2}`` applied to ``phi`` (infimum over grid nodes)."""
    return lax_oleinik_step(model, phi, t1, t2, cfg, cache=cache).solution


@dataclass
class EvolutionResult:
    """Frames ``u(t_k, .)``; ``argmin_map[k]`` is ``(argmin, curves)`` for frame ``k`` (``None`` at k=0)."""

    times: np.ndarray
    frames: list
    argmin_map: list

    @property
    def final(self) -> GridFunction:
        return self.frames[-1]


def evolve(model: LagrangianModel, phi: GridFunction, T: float, steps: int, cfg: SolverConfig,
           cache: KernelCache | None = None, t0: float = 0.0) -> EvolutionResult:
    """Successive applications of ``T`` over ``steps`` equal sub-intervals of ``[t0, t0 + T]``."""
    if not T > 0:
        raise ValueError(f"T must be positive, got {T}")
    if int(steps) < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    steps = int(steps)
    times = t0 + T * np.arange(steps + 1) / steps
    rng = np.random.default_rng(cfg.seed)
    cache = KernelCache() if cache is None else cache
    frames, argmins = [phi], [None]
    warm = None
    for k in range(steps):
        step = lax_oleinik_step(model, frames[-1], float(times[k]), float(times[k + 1]), cfg,
                                cache=cache, warm=warm, rng=rng)
        frames.append(step.solution)
        argmins.append((step.argmin, step.curves))
        warm = step.start_curves
    return EvolutionResult(times, frames, argmins)


class FixedPointError(RuntimeError):
    def __init__(self, message, residual, history):
        super().__init__(message)
        self.residual = residual
        self.history = history


@dataclass
class StationaryResult:
    """Fixed point of ``T^Delta_0`` with its convergence history.

    ``argmin``/``curves`` come from the last operator application, whose
    output is ``solution``; ``residual`` is the final sup-norm update.
    """

    solution: GridFunction
    residual: float
    history: np.ndarray
    step: float
    argmin: np.ndarray
    curves: np.ndarray

    @property
    def iterations(self) -> int:
        return len(self.history)

    def contraction_ratios(self) -> np.ndarray:
        h = self.history
        return h[1:] / h[:-1] if len(h) > 1 else np.empty(0)


def stationary_fixed_point(model: LagrangianModel, cfg: SolverConfig, initial: GridFunction | None = None,
                           cache: KernelCache | None = None) -> StationaryResult:
    """Iterate ``u <- T^Delta_0 u`` (``Delta = cfg.stationary_step``) until ``||u_{k+1} - u_k|| < fp_tol``."""
    if not model.autonomous:
        raise ValueError("stationary problems need a time-independent model")
    if "L6" not in model.declared:
        raise ValueError("stationary fixed point requires a model declaring L6")
    if initial is None:
        initial = GridFunction.constant(model.domain, cfg.grid_resolution(model.domain.dimension), 0.0)
    delta = cfg.stationary_step
    rng = np.random.default_rng(cfg.seed)
    cache = KernelCache() if cache is None else cache
    u, warm, history = initial, None, []
    for _ in range(cfg.max_fp_iter):
        step = lax_oleinik_step(model, u, 0.0, delta, cfg, cache=cache, warm=warm, rng=rng)
        res = float(np.max(np.abs(step.solution.values - u.values)))
        history.append(res)
        u, warm = step.solution, step.start_curves
        if res < cfg.fp_tol:
            return StationaryResult(u, res, np.asarray(history), delta, step.argmin, step.curves)
    raise FixedPointError(
        f"fixed-point iteration did not reach {cfg.fp_tol} in {cfg.max_fp_iter} steps (last update {history[-1]:.3g})",
        history[-1], np.asarray(history))
