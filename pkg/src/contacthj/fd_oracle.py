"""Monotone Lax-Friedrichs scheme for ``u_t + H(t, x, Du, u) = 0`` on periodic grids.

Independent of the variational machinery: it only needs ``H`` (here obtained
by the numerical Legendre transform) and is used to cross-check the
Lax-Oleinik solutions.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .lagrangian import HamiltonianModel
from .lax_oleinik import GridFunction


class FDInstabilityError(RuntimeError):
    """Sup-norm left the stability envelope (CFL or viscosity too small)."""


class FDNonConvergenceError(RuntimeError):
    def __init__(self, message, rate):
        super().__init__(message)
        self.rate = rate


@dataclass(frozen=True)
class FDConfig:
    """Scheme settings.

    ``artificial_viscosity`` of ``None`` picks ``1.1 * max|H_p|`` per axis at
    every step from the current one-sided slopes.  ``max_dt`` caps the step
    where the CFL bound is loose (nearly flat data), keeping the forward-Euler
    error in the ``u``-dependence small.  ``t_end`` is ignored by
    :func:`fd_stationary`, which stops once ``||u^{n+1} - u^n|| / dt < steady_tol``.
    """

    resolution: int | tuple = 128
    t_end: float = 1.0
    cfl: float = 0.9
    artificial_viscosity: float | tuple | None = None
    steady_tol: float = 1e-8
    max_steps: int = 2_000_000
    viscosity_safety: float = 1.1
    max_dt: float | None = 2e-3

    def __post_init__(self):
        if not 0 < self.cfl <= 1:
            raise ValueError(f"cfl must lie in (0, 1], got {self.cfl}")
        if not self.t_end > 0:
            raise ValueError(f"t_end must be positive, got {self.t_end}")
        if not self.steady_tol > 0:
            raise ValueError("steady_tol must be positive")


def one_sided_slopes(u: np.ndarray, dx) -> tuple[np.ndarray, np.ndarray]:
    """Backward and forward differences ``(p-, p+)`` with shape ``u.shape + (d,)``."""
    d = u.ndim
    pm = np.stack([(u - np.roll(u, 1, axis=a)) / dx[a] for a in range(d)], axis=-1)
    pp = np.stack([(np.roll(u, -1, axis=a) - u) / dx[a] for a in range(d)], axis=-1)
    return pm, pp


def sampled_speed(hmodel: HamiltonianModel, t, x, u, pm, pp) -> np.ndarray:
    """``max |H_p|`` per axis over every corner of the one-sided slope box at every node."""
    d = pm.shape[-1]
    speed = np.zeros(d)
    for corner in itertools.product((0, 1), repeat=d):
        p = np.where(np.asarray(corner, dtype=bool), pp, pm)
        _, Hp, _ = hmodel.evaluate(t, x, p, u)
        speed = np.maximum(speed, np.max(np.abs(Hp), axis=0))
    return speed


def lax_friedrichs_step(hmodel: HamiltonianModel, u_flat, t: float, x, shape, dx, dt: float, nu) -> np.ndarray:
    """One explicit step ``u - dt * (H(t, x, p_c, u) - sum_a nu_a (p+_a - p-_a) / 2)``."""
    u = np.asarray(u_flat, dtype=float).reshape(shape)
    pm, pp = one_sided_slopes(u, dx)
    pm = pm.reshape(-1, len(shape))
    pp = pp.reshape(-1, len(shape))
    uf = u.reshape(-1)
    Hc, _, _ = hmodel.evaluate(t, x, 0.5 * (pm + pp), uf)
    return uf - dt * (Hc - 0.5 * np.sum(np.asarray(nu) * (pp - pm), axis=-1))


def _setup(hmodel, phi, cfg):
    res = (cfg.resolution,) * hmodel.domain.dimension if np.isscalar(cfg.resolution) else tuple(cfg.resolution)
    if phi is None:
        phi = GridFunction.constant(hmodel.domain, res, 0.0)
    elif phi.resolution != res:
        raise ValueError(f"initial data resolution {phi.resolution} differs from FD resolution {res}")
    return phi, phi.nodes(), np.asarray(phi.spacing), phi.resolution


def _run(hmodel, phi, cfg, t_end, stationary):
    phi, x, dx, shape = _setup(hmodel, phi, cfg)
    d = len(shape)
    u = phi.flat.copy()
    fixed_nu = None
    if cfg.artificial_viscosity is not None:
        fixed_nu = np.broadcast_to(np.asarray(cfg.artificial_viscosity, dtype=float), (d,)).copy()
    K = float(hmodel.K)
    u0max = float(np.max(np.abs(u)))
    c = 0.0
    warned = False
    t, steps = 0.0, 0
    rate = math.inf
    while True:
        if not stationary and t >= t_end * (1 - 1e-14):
            break
        if steps >= cfg.max_steps:
            if stationary:
                raise FDNonConvergenceError(f"no steady state within {cfg.max_steps} steps (rate {rate:.3g})", rate)
            raise FDInstabilityError(f"max_steps {cfg.max_steps} reached at t={t:.6g}")
        ug = u.reshape(shape)
        pm, pp = one_sided_slopes(ug, dx)
        pm = pm.reshape(-1, d)
        pp = pp.reshape(-1, d)
        speed = sampled_speed(hmodel, t, x, u, pm, pp)
        if fixed_nu is None:
            nu = np.maximum(cfg.viscosity_safety * speed, 1e-12)
        else:
            nu = fixed_nu
            if not warned and np.any(speed > nu * (1 + 1e-12)):
                warnings.warn(f"artificial viscosity {nu.tolist()} below sampled max|H_p| {speed.tolist()}; "
                              "scheme may lose monotonicity", RuntimeWarning, stacklevel=3)
                warned = True
        dt = cfg.cfl / (float(np.sum(nu / dx)) + K)
        if cfg.max_dt is not None:
            dt = min(dt, cfg.max_dt)
        if not stationary:
            dt = min(dt, t_end - t)
        H0, _, _ = hmodel.evaluate(t, x, np.zeros_like(pm), np.zeros_like(u))
        c = max(c, float(np.max(np.abs(H0))))
        u_new = lax_friedrichs_step(hmodel, u, t, x, shape, dx, dt, nu)
        t += dt
        steps += 1
        envelope = math.exp(K * t) * (u0max + c * t)
        umax = float(np.max(np.abs(u_new)))
        if not np.isfinite(umax) or umax > 1.1 * envelope + 1e-9:
            raise FDInstabilityError(f"|u| = {umax:.6g} exceeds stability envelope {envelope:.6g} at t={t:.6g}")
        rate = float(np.max(np.abs(u_new - u))) / dt
        u = u_new
        if stationary and rate < cfg.steady_tol:
            break
    info = {"steps": steps, "time": t, "final_rate": rate}
    return phi.with_flat(u), info


def fd_evolve(hmodel: HamiltonianModel, phi: GridFunction, cfg: FDConfig, info: dict | None = None) -> GridFunction:
    """Solution at ``cfg.t_end`` from initial data ``phi``."""
    out, stats = _run(hmodel, phi, cfg, cfg.t_end, stationary=False)
    if info is not None:
        info.update(stats)
    return out


def fd_stationary(hmodel: HamiltonianModel, cfg: FDConfig, initial: GridFunction | None = None,
                  info: dict | None = None) -> GridFunction:
    """Large-time limit from ``initial`` (default ``0``) for a time-independent Hamiltonian."""
    if not hmodel.autonomous:
        raise ValueError("stationary FD solve needs a time-independent Hamiltonian")
    out, stats = _run(hmodel, initial, cfg, math.inf, stationary=True)
    if info is not None:
        info.update(stats)
    return out
