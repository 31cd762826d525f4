"""Carathéodory equation ``u' = L(s, xi, xi', u)`` along piecewise-linear curves.

Batched kernels work on *lifted* node arrays ``Z`` of shape ``(B, N+1, d)``:
problem ``b`` is the curve through ``Z[b, 0], ..., Z[b, N]`` at uniform times
on ``[t1[b], t2[b]]``.  Each segment is integrated with ``substeps`` classical
RK4 steps; the velocity is constant on a segment, so the right-hand side is
smooth between nodes.  Single-curve functions wrap the batched ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .lagrangian import DomainDescriptor, LagrangianModel

DIVERGENCE_THRESHOLD = 1e12
GAUSS_ORDER = 8


class DivergenceError(RuntimeError):
    def __init__(self, time: float):
        super().__init__(f"Caratheodory solution exceeded {DIVERGENCE_THRESHOLD:g} at s={time:.6g}")
        self.time = time


@dataclass(frozen=True, eq=False)
class Curve:
    """Uniformly time-sampled piecewise-linear curve on a torus.

    ``nodes`` are wrapped positions; ``winding[i]`` counts the periods crossed
    on segment ``i`` so that the lifted displacement is
    ``nodes[i+1] - nodes[i] + winding[i] * period``.
    """

    domain: DomainDescriptor
    t_start: float
    t_end: float
    nodes: np.ndarray
    winding: np.ndarray

    def __post_init__(self):
        nodes = np.atleast_2d(np.asarray(self.nodes, dtype=float))
        winding = np.asarray(self.winding, dtype=int).reshape(len(nodes) - 1, -1)
        if len(nodes) < 2:
            raise ValueError("a curve needs at least one segment")
        if not self.t_end > self.t_start:
            raise ValueError("t_end must exceed t_start")
        if not np.all(np.isfinite(nodes)):
            raise ValueError("curve nodes must be finite")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "winding", winding)
        nodes.setflags(write=False)
        winding.setflags(write=False)

    @classmethod
    def from_lifted(cls, domain: DomainDescriptor, t_start: float, t_end: float, lifted) -> "Curve":
        lifted = np.atleast_2d(np.asarray(lifted, dtype=float))
        P = domain.periods
        wrapped = np.mod(lifted, P)
        winding = np.rint((np.diff(lifted, axis=0) - np.diff(wrapped, axis=0)) / P).astype(int)
        return cls(domain, float(t_start), float(t_end), wrapped, winding)

    @classmethod
    def straight(cls, domain, t_start, t_end, x, y, n_segments, winding=0) -> "Curve":
        """Constant-speed curve from ``x`` to ``y`` in the given winding class.

        Winding 0 is the shortest displacement; ``k`` adds ``k`` periods per axis.
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        end = x + domain.displacement(x, y) + np.asarray(winding) * domain.periods
        theta = np.linspace(0.0, 1.0, n_segments + 1)[:, None]
        return cls.from_lifted(domain, t_start, t_end, x + theta * (end - x))

    @property
    def n_segments(self) -> int:
        return len(self.nodes) - 1

    @property
    def dt(self) -> float:
        return (self.t_end - self.t_start) / self.n_segments

    @property
    def times(self) -> np.ndarray:
        return np.linspace(self.t_start, self.t_end, self.n_segments + 1)

    def lifted(self) -> np.ndarray:
        steps = np.diff(self.nodes, axis=0) + self.winding * self.domain.periods
        return np.concatenate([self.nodes[:1], self.nodes[:1] + np.cumsum(steps, axis=0)])

    @property
    def velocities(self) -> np.ndarray:
        return np.diff(self.lifted(), axis=0) / self.dt

    def position(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        Z = self.lifted()
        tau = np.clip((s - self.t_start) / self.dt, 0.0, self.n_segments)
        i = np.minimum(np.floor(tau).astype(int), self.n_segments - 1)
        th = (tau - i)[..., None]
        return self.domain.wrap(Z[i] + th * (Z[i + 1] - Z[i]))


@dataclass(frozen=True, eq=False)
class CaratheodoryTrajectory:
    """Solution samples on the substep grid (``N * substeps + 1`` times).

    ``stage_u[n]`` holds the four RK4 stage arguments of step ``n``; a
    linearization frozen along this trajectory uses them when grids coincide.
    """

    curve: Curve
    times: np.ndarray
    u_values: np.ndarray
    u0: float
    substeps: int
    stage_u: np.ndarray
    integrator_stats: dict = field(default_factory=dict)

    @property
    def u_end(self) -> float:
        return float(self.u_values[-1])


# ---------------------------------------------------------------------------
# right-hand sides


class DirectRHS:
    """``f(s, x, v, w) = L(s, x, v, w)``."""

    def __init__(self, model: LagrangianModel):
        self.model = model

    def subset(self, idx):
        return self

    def value(self, n, k, s, x, v, w):
        return self.model.L(s, x, v, w)

    def partials(self, n, k, s, x, v, w):
        m = self.model
        return m.L_u(s, x, v, w), m.L_x(s, x, v, w), m.L_v(s, x, v, w)


class LinearizedRHS:
    """``f = L(s,x,v,u*) + L_u(s,x,v,u*) (w - u*)`` with ``u*`` frozen per RK4 stage.

    ``ustar`` has shape ``(B, M, 4)``.
    """

    def __init__(self, model: LagrangianModel, ustar: np.ndarray):
        self.model = model
        self.ustar = ustar

    def subset(self, idx):
        return LinearizedRHS(self.model, self.ustar[idx])

    def value(self, n, k, s, x, v, w):
        us = self.ustar[:, n, k]
        m = self.model
        return m.L(s, x, v, us) + m.L_u(s, x, v, us) * (w - us)

    def partials(self, n, k, s, x, v, w):
        us = self.ustar[:, n, k]
        m = self.model
        dw = (w - us)[:, None]
        lux, luv = m.mixed_u(s, x, v, us)
        return m.L_u(s, x, v, us), m.L_x(s, x, v, us) + lux * dw, m.L_v(s, x, v, us) + luv * dw


# ---------------------------------------------------------------------------
# batched integration and adjoint


def _geometry(Z, t1, t2):
    B, N1, _ = Z.shape
    t1 = np.broadcast_to(np.asarray(t1, dtype=float), (B,))
    t2 = np.broadcast_to(np.asarray(t2, dtype=float), (B,))
    h = (t2 - t1) / (N1 - 1)
    dZ = np.diff(Z, axis=1)
    return t1, h, dZ, dZ / h[:, None, None]


def integrate_batch(rhs, Z, t1, t2, u0, substeps: int, keep_stages: bool = False):
    """RK4 along each curve; returns ``U`` of shape ``(B, N*m+1)`` (and stage arguments)."""
    Z = np.asarray(Z, dtype=float)
    B, N1, _ = Z.shape
    N, m = N1 - 1, int(substeps)
    t1, h, dZ, V = _geometry(Z, t1, t2)
    dt = h / m
    U = np.empty((B, N * m + 1))
    w = np.broadcast_to(np.asarray(u0, dtype=float), (B,)).copy()
    U[:, 0] = w
    stages = np.empty((B, N * m, 4)) if keep_stages else None
    f = rhs.value
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(N):
            zi, dzi, vi = Z[:, i], dZ[:, i], V[:, i]
            x0 = zi
            for j in range(m):
                n = i * m + j
                s0 = t1 + n * dt
                xh = zi + ((j + 0.5) / m) * dzi
                x1 = zi + ((j + 1) / m) * dzi
                k1 = f(n, 0, s0, x0, vi, w)
                w2 = w + 0.5 * dt * k1
                k2 = f(n, 1, s0 + 0.5 * dt, xh, vi, w2)
                w3 = w + 0.5 * dt * k2
                k3 = f(n, 2, s0 + 0.5 * dt, xh, vi, w3)
                w4 = w + dt * k3
                k4 = f(n, 3, s0 + dt, x1, vi, w4)
                if keep_stages:
                    stages[:, n, 0] = w
                    stages[:, n, 1] = w2
                    stages[:, n, 2] = w3
                    stages[:, n, 3] = w4
                w = w + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                U[:, n + 1] = w
                x0 = x1
    return (U, stages) if keep_stages else U


def adjoint_batch(rhs, Z, t1, t2, U, substeps: int, node_weights: bool = False, stages=None):
    """Exact gradient of ``U[:, -1]`` with respect to every node and to ``u0``.

    Reverse sweep through the RK4 stages (discrete adjoint).  The adjoint
    variable plays the role of the weight ``exp(int_s^t L_u)``; each stage
    contributes ``L_x`` times the hat function of the node plus ``L_v`` times
    its derivative.  Returns ``(G, dJ/du0)`` with ``G`` of shape ``(B, N+1, d)``;
    with ``node_weights`` also the adjoint ``dJ/du`` at every node, ``(B, N+1)``.
    ``stages`` (from ``integrate_batch(..., keep_stages=True)``) avoids
    recomputing the forward stage values.
    """
    Z = np.asarray(Z, dtype=float)
    B, N1, d = Z.shape
    N, m = N1 - 1, int(substeps)
    t1, h, dZ, V = _geometry(Z, t1, t2)
    dt = h / m
    hinv = (1.0 / h)[:, None]
    G = np.zeros((B, N1, d))
    a = np.ones(B)
    mu = np.empty((B, N1)) if node_weights else None
    if node_weights:
        mu[:, N] = a
    f, df = rhs.value, rhs.partials
    for i in range(N - 1, -1, -1):
        zi, dzi, vi = Z[:, i], dZ[:, i], V[:, i]
        gl = np.zeros((B, d))
        gr = np.zeros((B, d))
        for j in range(m - 1, -1, -1):
            n = i * m + j
            s0 = t1 + n * dt
            th0, thh, th1 = j / m, (j + 0.5) / m, (j + 1) / m
            x0 = zi + th0 * dzi
            xh = zi + thh * dzi
            x1 = zi + th1 * dzi
            if stages is None:
                w = U[:, n]
                k1 = f(n, 0, s0, x0, vi, w)
                w2 = w + 0.5 * dt * k1
                k2 = f(n, 1, s0 + 0.5 * dt, xh, vi, w2)
                w3 = w + 0.5 * dt * k2
                k3 = f(n, 2, s0 + 0.5 * dt, xh, vi, w3)
                w4 = w + dt * k3
            else:
                w, w2, w3, w4 = stages[:, n, 0], stages[:, n, 1], stages[:, n, 2], stages[:, n, 3]
            fw1, fx1, fv1 = df(n, 0, s0, x0, vi, w)
            fw2, fx2, fv2 = df(n, 1, s0 + 0.5 * dt, xh, vi, w2)
            fw3, fx3, fv3 = df(n, 2, s0 + 0.5 * dt, xh, vi, w3)
            fw4, fx4, fv4 = df(n, 3, s0 + dt, x1, vi, w4)
            kb1 = a * dt / 6.0
            kb2 = a * dt / 3.0
            kb3 = a * dt / 3.0
            kb4 = a * dt / 6.0
            abar = a.copy()
            t = kb4 * fw4
            abar += t
            kb3 = kb3 + t * dt
            t = kb3 * fw3
            abar += t
            kb2 = kb2 + t * 0.5 * dt
            t = kb2 * fw2
            abar += t
            kb1 = kb1 + t * 0.5 * dt
            abar += kb1 * fw1
            c1, c2, c3, c4 = kb1[:, None], kb2[:, None], kb3[:, None], kb4[:, None]
            cx0, cxh, cx1 = c1 * fx1, c2 * fx2 + c3 * fx3, c4 * fx4
            cv = (c1 * fv1 + c2 * fv2 + c3 * fv3 + c4 * fv4) * hinv
            gl += (1.0 - th0) * cx0 + (1.0 - thh) * cxh + (1.0 - th1) * cx1 - cv
            gr += th0 * cx0 + thh * cxh + th1 * cx1 + cv
            a = abar
        G[:, i] += gl
        G[:, i + 1] += gr
        if node_weights:
            mu[:, i] = a
    return (G, a, mu) if node_weights else (G, a)


def first_bad_index(U):
    """Index of the first sample exceeding the divergence guard, or None."""
    bad = ~(np.abs(U) <= DIVERGENCE_THRESHOLD)
    if not bad.any():
        return None
    return int(np.argmax(bad.any(axis=0)))


# ---------------------------------------------------------------------------
# quadrature on the substep grid


def _samples(model, Z, t1, t2, U, m):
    """States ``(s, x, v, u)`` on the substep grid refined once, grouped per segment.

    Shapes: ``s, u`` -> ``(B, N, 2m+1)``; ``x, v`` -> ``(B, N, 2m+1, d)``.
    Node times appear twice (once per adjacent segment) so one-sided
    velocities are used on each side of a kink.  ``u`` at the inserted
    midpoints is the cubic Hermite interpolant of the RK4 samples with
    slopes ``u' = L``, so the quadrature resolves the integrand on the same
    grid as the RK4 stages.
    """
    B, N1, d = Z.shape
    N = N1 - 1
    t1, h, dZ, V = _geometry(Z, t1, t2)
    theta = np.arange(2 * m + 1) / (2 * m)
    x = Z[:, :-1, None, :] + theta[None, None, :, None] * dZ[:, :, None, :]
    v = np.broadcast_to(V[:, :, None, :], x.shape)
    s = t1[:, None, None] + (np.arange(N)[None, :, None] + theta[None, None, :]) * h[:, None, None]
    idx = np.arange(N)[:, None] * m + np.arange(m + 1)[None, :]
    coarse = U[:, idx]
    dt = h / (2 * m)
    u = np.empty(s.shape)
    u[..., 0::2] = coarse
    f = model.L(s[..., 0::2], x[..., 0::2, :], v[..., 0::2, :], coarse)
    u[..., 1::2] = 0.5 * (coarse[..., :-1] + coarse[..., 1:]) + (dt[:, None, None] / 4.0) * (f[..., :-1] - f[..., 1:])
    return s, x, v, u, dt


def _cumulative(f, dt, rule):
    """Running integral within each segment along the last axis."""
    m = f.shape[-1] - 1
    dt = dt[:, None, None]
    C = np.zeros_like(f)
    if rule == "trapezoid" or m % 2:
        C[..., 1:] = np.cumsum(0.5 * (f[..., 1:] + f[..., :-1]), axis=-1) * dt
        return C
    if rule != "simpson":
        raise ValueError(f"unknown quadrature rule {rule!r}")
    pairs = (f[..., 0:-2:2] + 4.0 * f[..., 1:-1:2] + f[..., 2::2]) * (dt / 3.0)
    C[..., 2::2] = np.cumsum(pairs, axis=-1)
    C[..., 1::2] = C[..., 0:-2:2] + (5.0 * f[..., 0:-2:2] + 8.0 * f[..., 1:-1:2] - f[..., 2::2]) * (dt / 12.0)
    return C


def _global_cumulative(f, dt, rule):
    C = _cumulative(f, dt, rule)
    totals = C[..., -1]
    offsets = np.concatenate([np.zeros_like(totals[:, :1]), np.cumsum(totals, axis=1)[:, :-1]], axis=1)
    return C + offsets[..., None]


def _weighted_parts(rate, source, dt, rule):
    """``(exp(int rate), int exp(int_s^t rate) source ds)`` on the sample grid."""
    E = _global_cumulative(rate, dt, rule)
    ET = E[:, -1, -1]
    weight = np.exp(ET[:, None, None] - E)
    integral = _cumulative(weight * source, dt, rule)[..., -1].sum(axis=1)
    return np.exp(ET), integral


def _weighted_end_value(rate, source, u0, dt, rule):
    factor, integral = _weighted_parts(rate, source, dt, rule)
    return factor * u0 + integral


def integrating_factor_parts(model, Z, t1, t2, U, m, rule="simpson"):
    """``(exp(int L_u), int exp(int_s^t L_u)(L - u L_u) ds)`` along each trajectory.

    Also returns ``min(-L_u)`` over the samples (the measured decay rate).
    """
    s, x, v, u, dt = _samples(model, Z, t1, t2, U, m)
    Lu = np.broadcast_to(model.L_u(s, x, v, u), u.shape)
    g = model.L(s, x, v, u) - u * Lu
    factor, integral = _weighted_parts(Lu, g, dt, rule)
    return factor, integral, np.min(-Lu.reshape(len(Lu), -1), axis=1)


def integrating_factor_batch(model, Z, t1, t2, U, m, rule="simpson"):
    factor, integral, _ = integrating_factor_parts(model, Z, t1, t2, U, m, rule)
    return factor * U[:, 0] + integral


def discounted_action_batch(model, Z, t1, t2, U, m, rule="simpson"):
    """``exp(-lam (t2-t1)) u0 + int exp(lam (s - t2)) L0 ds`` for constant ``L_u = -lam``.

    ``L0(s, x, v) = L(s, x, v, 0)``; evaluated directly, no ODE values used
    beyond ``u0``.
    """
    if model.lu_constant is None:
        raise ValueError("discounted closed form needs a model with constant L_u")
    s, x, v, u, dt = _samples(model, Z, t1, t2, U, m)
    lam = -float(model.lu_constant)
    t2 = np.broadcast_to(np.asarray(t2, dtype=float), (len(U),))
    t1 = np.broadcast_to(np.asarray(t1, dtype=float), (len(U),))
    L0 = model.L(s, x, v, np.zeros_like(u))
    w = np.exp(lam * (s - t2[:, None, None]))
    integral = _cumulative(w * L0, dt, rule)[..., -1].sum(axis=1)
    return np.exp(-lam * (t2 - t1)) * U[:, 0] + integral


def _gauss01(order=GAUSS_ORDER):
    nodes, weights = np.polynomial.legendre.leggauss(order)
    return 0.5 * (nodes + 1.0), 0.5 * weights


def _dyadic_panels(umax):
    """Breakpoints ``0, 2^-K, ..., 1/2, 1`` with ``2^-K`` below ``1/(1 + umax)``."""
    K = int(np.clip(np.ceil(np.log2(1.0 + umax)), 0, 40))
    return np.concatenate([[0.0], 2.0 ** -np.arange(K, -1, -1)])


def mean_Lu(model, s, x, v, u, order=GAUSS_ORDER):
    """``int_0^1 L_u(s, x, v, lambda*u) d lambda``.

    ``order``-point Gauss-Legendre on dyadic panels refined toward
    ``lambda = 0`` (``lambda -> L_u(lambda u)`` varies on the scale ``1/|u|``).
    """
    u = np.asarray(u, dtype=float)
    umax = float(np.max(np.abs(u))) if u.size else 0.0
    nodes, weights = _gauss01(order)
    edges = _dyadic_panels(umax if np.isfinite(umax) else 0.0)
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        for lam, w in zip(a + (b - a) * nodes, (b - a) * weights):
            total = total + w * model.L_u(s, x, v, lam * u)
    return total


def hatLu_batch(model, Z, t1, t2, U, m, rule="simpson"):
    s, x, v, u, dt = _samples(model, Z, t1, t2, U, m)
    rate = mean_Lu(model, s, x, v, u)
    return _weighted_end_value(rate, model.L(s, x, v, np.zeros_like(u)), U[:, 0], dt, rule)


def gauge_batch(model, Z, t1, t2, U, m, gauge, rule="simpson"):
    s, x, v, u, dt = _samples(model, Z, t1, t2, U, m)
    F = np.broadcast_to(gauge(model, s, x, v, u), u.shape)
    if not np.all(np.isfinite(F)):
        b, i, j = np.argwhere(~np.isfinite(F))[0]
        raise ValueError(f"gauge function is not finite at s={s[b, i, j]:.6g}")
    return _weighted_end_value(F, model.L(s, x, v, u) - F * u, U[:, 0], dt, rule)


def gronwall_bound_batch(model, Z, t1, t2, U, m, rule="simpson"):
    """A priori bound ``exp(K (t2 - t1)) (|u0| + int |L(s, xi, xi', 0)| ds)``."""
    s, x, v, u, dt = _samples(model, Z, t1, t2, U, m)
    absL0 = np.abs(model.L(s, x, v, np.zeros_like(u)))
    total = _cumulative(absL0, dt, rule)[..., -1].sum(axis=1)
    span = np.broadcast_to(np.asarray(t2, dtype=float) - np.asarray(t1, dtype=float), total.shape)
    return np.exp(model.K * span) * (np.abs(U[:, 0]) + total)


@dataclass(frozen=True)
class GaugeFunction:
    """Bounded closed-form gauge ``F``.

    ``kind`` is ``"constant"`` (``F = value``), ``"sine"``
    (``F = value + amplitude * sin(2 pi frequency s + phase)``) or
    ``"canonical"`` (``F = L_u`` along the trajectory).
    """

    kind: str = "constant"
    value: float = 0.0
    amplitude: float = 0.0
    frequency: float = 1.0
    phase: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "sine", "canonical"):
            raise ValueError(f"unknown gauge kind {self.kind!r}")
        for name in ("value", "amplitude", "frequency", "phase"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"gauge {name} must be finite")

    def __call__(self, model, s, x, v, u):
        if self.kind == "canonical":
            return model.L_u(s, x, v, u)
        out = np.full(np.shape(u), self.value)
        if self.kind == "sine":
            out = out + self.amplitude * np.sin(2.0 * np.pi * self.frequency * np.asarray(s) + self.phase)
        return out

    @property
    def label(self) -> str:
        if self.kind == "canonical":
            return "F=L_u"
        if self.kind == "constant":
            return f"F={self.value:g}"
        return f"F={self.value:g}+{self.amplitude:g}sin(2pi*{self.frequency:g}s+{self.phase:g})"

    @classmethod
    def parse(cls, spec) -> "GaugeFunction":
        """Parse ``"lu"``, ``"const:<c>"`` or ``"sin:<amp>:<freq>[:<offset>]"``."""
        if isinstance(spec, GaugeFunction):
            return spec
        parts = str(spec).strip().split(":")
        head = parts[0].lower()
        try:
            if head in ("lu", "canonical"):
                return cls("canonical")
            if head in ("const", "constant"):
                return cls("constant", float(parts[1]))
            if head in ("sin", "sine"):
                amp, freq = float(parts[1]), float(parts[2])
                off = float(parts[3]) if len(parts) > 3 else 0.0
                return cls("sine", off, amp, freq)
        except (IndexError, ValueError) as exc:
            raise ValueError(f"malformed gauge spec {spec!r}") from exc
        raise ValueError(f"unknown gauge spec {spec!r}")


# ---------------------------------------------------------------------------
# single-curve API


def _grid_times(curve: Curve, m: int):
    return np.linspace(curve.t_start, curve.t_end, curve.n_segments * m + 1)


def _check(U, times):
    k = first_bad_index(U)
    if k is not None:
        raise DivergenceError(float(times[min(k, len(times) - 1)]))


def _trajectory(rhs, curve, u0, substeps, estimate_error):
    u0 = float(u0)
    if not math.isfinite(u0):
        raise ValueError("u0 must be finite")
    Z = curve.lifted()[None]
    U, stages = integrate_batch(rhs, Z, curve.t_start, curve.t_end, u0, substeps, keep_stages=True)
    times = _grid_times(curve, substeps)
    _check(U, times)
    stats = {"substeps": int(substeps), "steps": int(U.shape[1] - 1)}
    if estimate_error:
        fine = integrate_batch(rhs_refined(rhs), Z, curve.t_start, curve.t_end, u0, 2 * substeps)
        stats["error_estimate"] = float(abs(fine[0, -1] - U[0, -1]) * 16.0 / 15.0)
    return CaratheodoryTrajectory(curve, times, U[0], u0, int(substeps), stages[0], stats)


def rhs_refined(rhs):
    """The same right-hand side on a twice finer step grid (frozen data re-sampled)."""
    if isinstance(rhs, LinearizedRHS):
        us = rhs.ustar  # (1, M, 4): stage 0 at s_n, stages 1-2 at s_{n+1/2}, stage 3 at s_{n+1}
        node = np.concatenate([us[:, :, 0], us[:, -1:, 3]], axis=1)
        half = 0.5 * (us[:, :, 1] + us[:, :, 2])
        fine_nodes = np.empty((us.shape[0], 2 * us.shape[1] + 1))
        fine_nodes[:, 0::2] = node
        fine_nodes[:, 1::2] = half
        quarter = 0.5 * (fine_nodes[:, :-1] + fine_nodes[:, 1:])
        fine = np.stack([fine_nodes[:, :-1], quarter, quarter, fine_nodes[:, 1:]], axis=-1)
        return LinearizedRHS(rhs.model, fine)
    return rhs


def solve_caratheodory(model: LagrangianModel, curve: Curve, u0: float, substeps: int = 8,
                       estimate_error: bool = True) -> CaratheodoryTrajectory:
    """Integrate ``u' = L(s, xi, xi', u)``, ``u(t_start) = u0`` along ``curve``.

    Raises :class:`DivergenceError` if ``|u|`` passes the guard threshold.
    ``integrator_stats["error_estimate"]`` is the Richardson estimate from a
    run with doubled substeps.
    """
    return _trajectory(DirectRHS(model), curve, u0, substeps, estimate_error)


def frozen_stages(frozen: CaratheodoryTrajectory, curve: Curve, substeps: int) -> np.ndarray:
    """Frozen ``u*`` at the RK4 stage times of ``curve``'s grid, shape ``(M, 4)``.

    Identical grids reuse the stored stage arguments (then the linearization
    reproduces the frozen trajectory to rounding); otherwise ``u*`` is
    interpolated linearly in time.
    """
    fc = frozen.curve
    same = (
        substeps == frozen.substeps
        and curve.n_segments == fc.n_segments
        and math.isclose(curve.t_start, fc.t_start, rel_tol=0, abs_tol=1e-14)
        and math.isclose(curve.t_end, fc.t_end, rel_tol=0, abs_tol=1e-14)
    )
    if same:
        return np.asarray(frozen.stage_u)
    if curve.t_start < fc.t_start - 1e-12 or curve.t_end > fc.t_end + 1e-12:
        raise ValueError("frozen trajectory does not cover the curve's time window")
    t = _grid_times(curve, substeps)
    mid = 0.5 * (t[:-1] + t[1:])
    ui = lambda q: np.interp(q, frozen.times, frozen.u_values)  # noqa: E731
    return np.stack([ui(t[:-1]), ui(mid), ui(mid), ui(t[1:])], axis=-1)


def solve_linearized(model: LagrangianModel, eta: Curve, frozen: CaratheodoryTrajectory, u0: float,
                     substeps: int | None = None, estimate_error: bool = True) -> CaratheodoryTrajectory:
    """Affine Carathéodory equation with ``u`` frozen along ``frozen``.

    ``v' = L(s, eta, eta', u*) + L_u(s, eta, eta', u*) (v - u*)``, ``v(t_start) = u0``.
    """
    m = frozen.substeps if substeps is None else substeps
    ustar = frozen_stages(frozen, eta, m)[None]
    return _trajectory(LinearizedRHS(model, ustar), eta, u0, m, estimate_error)


def _single(fn, model, traj, *args, rule="simpson"):
    c = traj.curve
    return float(fn(model, c.lifted()[None], c.t_start, c.t_end, traj.u_values[None], traj.substeps, *args, rule=rule)[0])


def integrating_factor_value(model: LagrangianModel, traj: CaratheodoryTrajectory, rule: str = "simpson") -> float:
    """``exp(int L_u) u0 + int exp(int_s^t L_u) (L - u L_u) ds`` along ``traj``."""
    return _single(integrating_factor_batch, model, traj, rule=rule)


def hatLu_splitting_value(model: LagrangianModel, traj: CaratheodoryTrajectory, rule: str = "simpson") -> float:
    """End value from the integral-mean splitting ``L(u) = L(0) + mean(L_u) u``."""
    return _single(hatLu_batch, model, traj, rule=rule)


def gaugeF_splitting_value(model: LagrangianModel, traj: CaratheodoryTrajectory, F: GaugeFunction | Callable,
                           rule: str = "simpson") -> float:
    """End value from the splitting ``L = (L - F u) + F u`` for an arbitrary gauge ``F``."""
    gauge = F if isinstance(F, GaugeFunction) else _CallableGauge(F)
    return _single(gauge_batch, model, traj, gauge, rule=rule)


class _CallableGauge:
    def __init__(self, fn):
        self.fn = fn

    def __call__(self, model, s, x, v, u):
        return self.fn(s, x, v, u)


def gronwall_bound(model: LagrangianModel, traj: CaratheodoryTrajectory) -> float:
    return _single(gronwall_bound_batch, model, traj)
