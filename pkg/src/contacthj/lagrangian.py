"""Lagrangian and Hamiltonian models on flat tori.

All callables follow one broadcasting convention: positions, velocities and
momenta carry the spatial axis last (shape ``(..., d)``), while the time ``s``
and the unknown ``u`` broadcast against the leading axes.  Scalars work too.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

CONDITIONS = ("L1", "L2", "L3", "L4", "L5", "L6")

Array = np.ndarray


class LegendreError(RuntimeError):
    """Newton iteration for a Legendre transform did not converge."""

    def __init__(self, message: str, worst_residual: float):
        super().__init__(f"{message} (worst residual {worst_residual:.3e})")
        self.worst_residual = worst_residual


@dataclass(frozen=True)
class DomainDescriptor:
    """Flat torus of dimension 1 or 2 with side lengths ``period``."""

    dimension: int = 1
    period: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.dimension}")
        period = tuple(float(p) for p in np.broadcast_to(self.period, (self.dimension,)))
        if not all(math.isfinite(p) and p > 0 for p in period):
            raise ValueError(f"periods must be positive and finite, got {period}")
        object.__setattr__(self, "period", period)

    @property
    def periods(self) -> Array:
        return np.asarray(self.period)

    def wrap(self, x) -> Array:
        """Map positions into the fundamental cell [0, period)."""
        x = np.asarray(x, dtype=float)
        return np.mod(x, self.periods)

    def displacement(self, x, y) -> Array:
        """Shortest lifted displacement from ``x`` to ``y`` (componentwise in [-P/2, P/2))."""
        P = self.periods
        d = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
        return d - P * np.floor(d / P + 0.5)

    def distance(self, x, y) -> Array:
        return np.linalg.norm(self.displacement(x, y), axis=-1)


@dataclass(frozen=True)
class TrigPotential:
    """Finite trigonometric polynomial ``V(x) = sum a cos(2 pi k.x/P) + b sin(2 pi k.x/P)``.

    ``terms`` holds ``(modes, a, b)`` with ``modes`` an integer tuple of length d.
    """

    domain: DomainDescriptor
    terms: tuple[tuple[tuple[int, ...], float, float], ...] = ()

    @classmethod
    def from_coefficients(cls, domain: DomainDescriptor, rows: Sequence[Sequence[float]]):
        """Build from rows ``[k1, (k2,) a, b]`` as used in config files."""
        d = domain.dimension
        terms = []
        for row in rows:
            row = list(row)
            if len(row) != d + 2:
                raise ValueError(f"potential row {row} must have {d + 2} entries")
            modes = tuple(int(k) for k in row[:d])
            if any(float(k) != float(r) for k, r in zip(modes, row[:d])):
                raise ValueError(f"potential modes must be integers, got {row[:d]}")
            a, b = float(row[d]), float(row[d + 1])
            if not (math.isfinite(a) and math.isfinite(b)):
                raise ValueError(f"non-finite potential coefficient in {row}")
            terms.append((modes, a, b))
        return cls(domain, tuple(terms))

    def __post_init__(self):
        P = self.domain.periods
        W = np.array([2.0 * np.pi * np.asarray(m, dtype=float) / P for m, _, _ in self.terms]).reshape(-1, self.domain.dimension)
        object.__setattr__(self, "_W", W)
        object.__setattr__(self, "_a", np.array([a for _, a, _ in self.terms], dtype=float))
        object.__setattr__(self, "_b", np.array([b for _, _, b in self.terms], dtype=float))

    def _phase(self, x):
        x = np.asarray(x, dtype=float)
        if self.domain.dimension == 1:
            return x[..., :1] * self._W[:, 0]
        return x @ self._W.T

    def __call__(self, x) -> Array:
        x = np.asarray(x, dtype=float)
        if not self.terms:
            return np.zeros(x.shape[:-1])
        ph = self._phase(x)
        out = np.cos(ph) @ self._a if self._a.any() else 0.0
        if self._b.any():
            out = out + np.sin(ph) @ self._b
        return out + np.zeros(x.shape[:-1])

    def gradient(self, x) -> Array:
        x = np.asarray(x, dtype=float)
        if not self.terms:
            return np.zeros(x.shape)
        ph = self._phase(x)
        c = -np.sin(ph) * self._a if self._a.any() else 0.0
        if self._b.any():
            c = c + np.cos(ph) * self._b
        return (c + np.zeros(ph.shape)) @ self._W

    @property
    def sup_bound(self) -> float:
        return float(sum(abs(a) + abs(b) for _, a, b in self.terms))


@dataclass(frozen=True)
class TonelliLagrangian:
    """u-independent mechanical part ``L0(x, v) = v.A.v/2 - V(x)``."""

    domain: DomainDescriptor
    potential: TrigPotential
    kinetic: tuple[tuple[float, ...], ...] | None = None

    @property
    def mass_matrix(self) -> Array:
        d = self.domain.dimension
        if self.kinetic is None:
            return np.eye(d)
        A = np.asarray(self.kinetic, dtype=float).reshape(d, d)
        return A

    def __post_init__(self):
        A = self.mass_matrix
        if not np.allclose(A, A.T) or np.linalg.eigvalsh(A).min() <= 0:
            raise ValueError("kinetic matrix must be symmetric positive definite")
        object.__setattr__(self, "_A", A)
        object.__setattr__(self, "_identity", bool(np.array_equal(A, np.eye(len(A)))))

    def value(self, x, v) -> Array:
        v = np.asarray(v, dtype=float)
        if self._identity:
            kin = 0.5 * np.sum(v * v, axis=-1)
        else:
            kin = 0.5 * np.einsum("...i,ij,...j->...", v, self._A, v)
        return kin - self.potential(x)

    def grad_x(self, x) -> Array:
        return -self.potential.gradient(x)

    def grad_v(self, v) -> Array:
        v = np.asarray(v, dtype=float)
        return v.copy() if self._identity else v @ self._A


def free_particle(domain: DomainDescriptor | None = None) -> TonelliLagrangian:
    domain = domain or DomainDescriptor()
    return TonelliLagrangian(domain, TrigPotential(domain))


def mechanical(domain: DomainDescriptor, rows, kinetic=None) -> TonelliLagrangian:
    kin = None if kinetic is None else tuple(tuple(float(a) for a in r) for r in np.atleast_2d(kinetic))
    return TonelliLagrangian(domain, TrigPotential.from_coefficients(domain, rows), kin)


@dataclass(frozen=True)
class LagrangianModel:
    """Immutable bundle ``(L, L_x, L_v, L_u, L_t)`` plus the constants of (L1)-(L6).

    ``theta`` describes the superlinear lower bound of (L2) as ``a * r**q``.
    ``lu_constant`` is set when ``L_u`` is one known constant everywhere; solvers
    use it to reuse fundamental-solution kernels across values of ``u0``.
    ``mass`` is a typical size of ``L_vv`` (optimizer preconditioning only).
    """

    domain: DomainDescriptor
    L: Callable
    L_x: Callable
    L_v: Callable
    L_u: Callable
    L_t: Callable
    declared: frozenset = frozenset()
    K: float = 0.0
    c0: float = 0.0
    theta: tuple[float, float] = (0.5, 2.0)
    C1: float = 1.0
    C2: float = 1e-3
    L_vv: Callable | None = None
    L_ux: Callable | None = None
    L_uv: Callable | None = None
    lu_constant: float | None = None
    autonomous: bool = True
    mass: float = 1.0
    name: str = "custom"
    description: dict = field(default_factory=dict, compare=False)

    def jet(self, s, x, v, u):
        """Value and first partials ``(L, L_x, L_v, L_u)`` at one batch of states."""
        return self.L(s, x, v, u), self.L_x(s, x, v, u), self.L_v(s, x, v, u), self.L_u(s, x, v, u)

    def hessian_vv(self, s, x, v, u) -> Array:
        if self.L_vv is not None:
            return np.broadcast_to(self.L_vv(s, x, v, u), np.shape(v) + (np.shape(v)[-1],))
        return _fd_jacobian(lambda w: self.L_v(s, x, w, u), v)

    def mixed_u(self, s, x, v, u):
        """``(L_ux, L_uv)``; finite differences of ``L_u`` unless supplied."""
        if self.L_ux is not None and self.L_uv is not None:
            return self.L_ux(s, x, v, u), self.L_uv(s, x, v, u)
        if self.lu_constant is not None:
            z = np.zeros(np.broadcast_shapes(np.shape(x), np.shape(v)))
            return z, z
        return (
            _fd_gradient(lambda y: self.L_u(s, y, v, u), x),
            _fd_gradient(lambda w: self.L_u(s, x, w, u), v),
        )


def _fd_gradient(f, x, step=1e-6):
    x = np.asarray(x, dtype=float)
    out = np.empty(x.shape)
    for i in range(x.shape[-1]):
        e = np.zeros(x.shape[-1])
        e[i] = step
        out[..., i] = (f(x + e) - f(x - e)) / (2 * step)
    return out


def _fd_jacobian(f, x, step=1e-6):
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    out = np.empty(x.shape + (d,))
    for j in range(d):
        e = np.zeros(d)
        e[j] = step
        out[..., :, j] = (f(x + e) - f(x - e)) / (2 * step)
    return out


def _separable_model(
    L0: TonelliLagrangian,
    lam: float = 0.0,
    eps: float = 0.0,
    rate: float = 0.0,
    name: str = "custom",
    declared=(),
    s_max: float = 10.0,
    description=None,
) -> LagrangianModel:
    """``L = exp(rate*s) * L0(x, v) - lam*u - eps*sqrt(1 + u^2)``."""
    A = L0.mass_matrix
    V = L0.potential

    def weight(s):
        return np.exp(rate * np.asarray(s, dtype=float)) if rate else 1.0

    def L(s, x, v, u):
        out = weight(s) * L0.value(x, v)
        if lam:
            out = out - lam * np.asarray(u, dtype=float)
        if eps:
            out = out - eps * np.sqrt(1.0 + np.square(u))
        return out

    def L_x(s, x, v, u):
        return np.asarray(weight(s))[..., None] * L0.grad_x(x) if rate else L0.grad_x(x)

    def L_v(s, x, v, u):
        return np.asarray(weight(s))[..., None] * L0.grad_v(v) if rate else L0.grad_v(v)

    def L_u(s, x, v, u):
        u = np.asarray(u, dtype=float)
        out = np.full(np.broadcast_shapes(np.shape(u), np.shape(s), np.shape(v)[:-1]), -float(lam))
        if eps:
            out = out - eps * u / np.sqrt(1.0 + u * u)
        return out

    def L_t(s, x, v, u):
        if not rate:
            return np.zeros(np.broadcast_shapes(np.shape(s), np.shape(u), np.shape(v)[:-1]))
        return rate * weight(s) * L0.value(x, v)

    def L_vv(s, x, v, u):
        w = np.asarray(weight(s))[..., None, None] if rate else 1.0
        return w * A

    def zeros_like_x(s, x, v, u):
        return np.zeros(np.broadcast_shapes(np.shape(x), np.shape(v)))

    eig = np.linalg.eigvalsh(A)
    wmin = math.exp(-abs(rate) * s_max) if rate else 1.0
    wmax = math.exp(abs(rate) * s_max) if rate else 1.0
    vmax = V.sup_bound
    if rate:
        C2 = abs(rate)
        C1 = 2.0 * abs(rate) * wmax * vmax + 1e-12
    else:
        C1, C2 = 1.0, 1e-3
    return LagrangianModel(
        domain=L0.domain,
        L=L,
        L_x=L_x,
        L_v=L_v,
        L_u=L_u,
        L_t=L_t,
        declared=frozenset(declared),
        K=abs(lam) + abs(eps),
        c0=wmax * vmax + abs(eps),
        theta=(0.5 * wmin * float(eig.min()), 2.0),
        C1=C1,
        C2=C2,
        L_vv=L_vv,
        L_ux=zeros_like_x,
        L_uv=zeros_like_x,
        lu_constant=None if eps else -float(lam),
        autonomous=not rate,
        mass=float(eig.mean()),
        name=name,
        description=dict(description or {}),
    )


def _check_finite(name, value):
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value}")
    return value


def make_discounted(L0: TonelliLagrangian, lam: float) -> LagrangianModel:
    """Discounted Lagrangian ``L0(x, v) - lam*u``; declares L6 only for lam > 0."""
    lam = _check_finite("lambda", lam)
    declared = {"L1", "L2", "L3", "L4", "L5"} | ({"L6"} if lam > 0 else set())
    return _separable_model(
        L0, lam=lam, name="discounted", declared=declared,
        description={"family": "discounted", "lambda": lam},
    )


def make_nonlinear_concave(L0: TonelliLagrangian, lam: float, eps: float) -> LagrangianModel:
    """``L0 - lam*u - eps*sqrt(1+u^2)``: strictly concave in u with L_u in [-lam-eps, -lam+eps]."""
    lam = _check_finite("lambda", lam)
    eps = _check_finite("eps", eps)
    if eps < 0 or lam <= eps:
        raise ValueError(f"need lambda > eps >= 0, got lambda={lam}, eps={eps}")
    return _separable_model(
        L0, lam=lam, eps=eps, name="nonlinear_concave", declared=set(CONDITIONS),
        description={"family": "nonlinear_concave", "lambda": lam, "eps": eps},
    )


def make_time_rescaled(L0: TonelliLagrangian, rate: float, s_max: float = 10.0) -> LagrangianModel:
    """Time-dependent ``exp(rate*s) * L0(x, v)`` (no u-dependence).

    The (L2)/(L4) constants are valid for ``s`` in ``[-s_max, s_max]``.
    """
    rate = _check_finite("rate", rate)
    return _separable_model(
        L0, rate=rate, name="time_rescaled", declared={"L1", "L2", "L3", "L4", "L5"}, s_max=s_max,
        description={"family": "time_rescaled", "rate": rate},
    )


# ---------------------------------------------------------------------------
# Hamiltonians


@dataclass(frozen=True)
class HamiltonianModel:
    """``H(s, x, p, u)`` with partials; mirrors :class:`LagrangianModel`."""

    domain: DomainDescriptor
    H: Callable
    H_p: Callable
    H_x: Callable
    H_u: Callable
    H_t: Callable
    H_pp: Callable | None = None
    K: float = 0.0
    autonomous: bool = True
    name: str = "custom"
    joint: Callable | None = None

    def evaluate(self, s, x, p, u):
        """``(H, H_p, H_u)``, in one pass when ``joint`` is available."""
        if self.joint is not None:
            return self.joint(s, x, p, u)
        return self.H(s, x, p, u), self.H_p(s, x, p, u), self.H_u(s, x, p, u)


def _newton_conjugate(objective_grad, hess, p, v0, tol, max_iter, merit):
    """Maximise ``p.v - f(v)`` for convex f, batched over leading axes.

    ``objective_grad(v)`` returns ``f'(v)``, ``hess(v)`` returns ``f''(v)`` and
    ``merit(v)`` returns ``f(v) - p.v``.
    """
    v = np.array(v0, dtype=float, copy=True)
    res = objective_grad(v) - p
    for _ in range(max_iter):
        err = np.max(np.abs(res), axis=-1)
        if np.all(err <= tol * (1.0 + np.max(np.abs(p), axis=-1))):
            return v, err
        step = -np.linalg.solve(hess(v), res[..., None])[..., 0]
        alpha = np.ones(v.shape[:-1])
        m0 = merit(v)
        for _ in range(40):
            trial = v + alpha[..., None] * step
            bad = ~(merit(trial) <= m0 + 1e-14 * (1.0 + np.abs(m0)))
            if not np.any(bad):
                break
            alpha = np.where(bad, 0.5 * alpha, alpha)
        v = v + alpha[..., None] * step
        res = objective_grad(v) - p
    err = np.max(np.abs(res), axis=-1)
    if np.all(err <= tol * (1.0 + np.max(np.abs(p), axis=-1))):
        return v, err
    raise LegendreError("Legendre transform: Newton did not converge", float(np.max(err)))


def maximizing_velocity(model: LagrangianModel, s, x, p, u, tol=1e-12, max_iter=50) -> Array:
    """``argmax_v { p.v - L(s, x, v, u) }`` by damped Newton."""
    p = np.asarray(p, dtype=float)
    x, p = np.broadcast_arrays(np.asarray(x, dtype=float), p)
    M = np.broadcast_to(model.hessian_vv(s, x, np.zeros_like(p), u), p.shape + (p.shape[-1],))
    v0 = np.linalg.solve(M, p[..., None])[..., 0]
    v, _ = _newton_conjugate(
        lambda w: model.L_v(s, x, w, u),
        lambda w: model.hessian_vv(s, x, w, u),
        p,
        v0,
        tol,
        max_iter,
        lambda w: model.L(s, x, w, u) - np.sum(p * w, axis=-1),
    )
    return v


def legendre_to_hamiltonian(model: LagrangianModel, tol: float = 1e-12, max_iter: int = 50) -> HamiltonianModel:
    """Numerical convex dual ``H(s,x,p,u) = sup_v {p.v - L(s,x,v,u)}``.

    Partials follow from the envelope theorem at the maximizing velocity, which
    is also returned as ``H_p``.
    """
    if not {"L1", "L2"} <= model.declared:
        raise ValueError("Legendre transform needs a model declaring (L1) and (L2)")

    def vstar(s, x, p, u):
        return maximizing_velocity(model, s, x, p, u, tol, max_iter)

    def H(s, x, p, u):
        v = vstar(s, x, p, u)
        return np.sum(np.asarray(p) * v, axis=-1) - model.L(s, x, v, u)

    def H_x(s, x, p, u):
        return -model.L_x(s, x, vstar(s, x, p, u), u)

    def H_u(s, x, p, u):
        return -model.L_u(s, x, vstar(s, x, p, u), u)

    def H_t(s, x, p, u):
        return -model.L_t(s, x, vstar(s, x, p, u), u)

    def H_pp(s, x, p, u):
        return np.linalg.inv(model.hessian_vv(s, x, vstar(s, x, p, u), u))

    def joint(s, x, p, u):
        v = vstar(s, x, p, u)
        return np.sum(np.asarray(p) * v, axis=-1) - model.L(s, x, v, u), v, -model.L_u(s, x, v, u)

    return HamiltonianModel(
        domain=model.domain, H=H, H_p=vstar, H_x=H_x, H_u=H_u, H_t=H_t, H_pp=H_pp,
        K=model.K, autonomous=model.autonomous, name=f"H[{model.name}]", joint=joint,
    )


def hamiltonian_to_lagrangian(hmodel: HamiltonianModel, tol: float = 1e-12, max_iter: int = 50):
    """Inverse transform ``L(s,x,v,u) = sup_p {p.v - H(s,x,p,u)}`` evaluated pointwise.

    Returns a callable; used to verify that the transform is an involution.
    """

    def hess(s, x, p, u):
        if hmodel.H_pp is not None:
            return hmodel.H_pp(s, x, p, u)
        return _fd_jacobian(lambda q: hmodel.H_p(s, x, q, u), p)

    def L(s, x, v, u):
        v = np.asarray(v, dtype=float)
        x_b, v_b = np.broadcast_arrays(np.asarray(x, dtype=float), v)
        p, _ = _newton_conjugate(
            lambda q: hmodel.H_p(s, x_b, q, u),
            lambda q: hess(s, x_b, q, u),
            v_b,
            np.zeros_like(v_b),
            tol,
            max_iter,
            lambda q: hmodel.H(s, x_b, q, u) - np.sum(v_b * q, axis=-1),
        )
        return np.sum(p * v_b, axis=-1) - hmodel.H(s, x_b, p, u)

    return L


# ---------------------------------------------------------------------------
# Condition checks


@dataclass
class ConditionResult:
    condition: str
    declared: bool
    passed: bool
    worst_margin: float
    worst_sample: dict


@dataclass
class ConditionReport:
    model: str
    samples: int
    results: dict[str, ConditionResult]

    @property
    def declared_pass(self) -> bool:
        return all(r.passed for r in self.results.values() if r.declared)

    def as_dict(self) -> dict:
        return {
            "model": self.model,
            "samples": self.samples,
            "conditions": {
                k: {
                    "declared": r.declared,
                    "passed": r.passed,
                    "worst_margin": r.worst_margin,
                    "worst_sample": r.worst_sample,
                }
                for k, r in self.results.items()
            },
        }


DEFAULT_BOX = {"s": (0.0, 1.0), "v": (-10.0, 10.0), "u": (-10.0, 10.0)}


def _sample_states(domain, samples, box, rng):
    d = domain.dimension
    box = {**DEFAULT_BOX, **(box or {})}
    for key, (lo, hi) in box.items():
        if not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi):
            raise ValueError(f"box bounds for {key!r} must be finite with lo <= hi")
    s = rng.uniform(*box["s"], size=samples)
    x = rng.uniform(0.0, 1.0, size=(samples, d)) * domain.periods
    v = rng.uniform(*box["v"], size=(samples, d))
    u = rng.uniform(*box["u"], size=samples)
    return box, s, x, v, u


def _result(name, declared, margin, s, x, v, u, strict=False):
    k = int(np.argmin(margin))
    worst = float(margin[k])
    passed = bool(worst > 0) if strict else bool(worst >= 0)
    sample = {"s": float(s[k]), "x": x[k].tolist(), "v": v[k].tolist(), "u": float(u[k])}
    return ConditionResult(name, declared, passed, worst, sample)


def check_conditions(model: LagrangianModel, samples: int = 1000, box: dict | None = None, seed: int = 0) -> ConditionReport:
    """Falsification test of (L1)-(L6) on random states drawn from ``box``.

    Every condition is checked; ``declared`` records which ones the model claims.
    Margins are positive when the condition holds at the worst sample.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    box, s, x, v, u = _sample_states(model.domain, samples, box, rng)
    v2 = rng.uniform(*box["v"], size=v.shape)
    u2 = rng.uniform(*box["u"], size=u.shape)
    dec = model.declared
    res = {}

    # (L1) strict midpoint convexity in v; tolerance scaled by |v1-v2|^2
    Lm = model.L(s, x, 0.5 * (v + v2), u)
    gap = 0.5 * (model.L(s, x, v, u) + model.L(s, x, v2, u)) - Lm
    sep = np.sum((v - v2) ** 2, axis=-1)
    scale = 1e-12 * (1.0 + np.abs(Lm))
    res["L1"] = _result("L1", "L1" in dec, np.where(sep > 1e-6, gap - scale, 1.0), s, x, v, u, strict=True)

    a, q = model.theta
    speed = np.linalg.norm(v, axis=-1)
    res["L2"] = _result("L2", "L2" in dec, model.L(s, x, v, 0.0) - (a * speed**q - model.c0) + 1e-12, s, x, v, u)

    Lu = model.L_u(s, x, v, u)
    res["L3"] = _result("L3", "L3" in dec, model.K - np.abs(Lu) + 1e-12, s, x, v, u)

    res["L4"] = _result(
        "L4", "L4" in dec,
        model.C1 + model.C2 * model.L(s, x, v, u) - np.abs(model.L_t(s, x, v, u)) + 1e-12,
        s, x, v, u,
    )

    Lmid = model.L(s, x, v, 0.5 * (u + u2))
    cgap = Lmid - 0.5 * (model.L(s, x, v, u) + model.L(s, x, v, u2))
    res["L5"] = _result("L5", "L5" in dec, cgap + 1e-10 * (1.0 + np.abs(Lmid)), s, x, v, u)

    res["L6"] = _result("L6", "L6" in dec, -Lu, s, x, v, u, strict=True)
    return ConditionReport(model.name, samples, res)


def finite_difference_check(model: LagrangianModel, samples: int = 1000, box: dict | None = None,
                            step: float = 1e-5, seed: int = 0) -> dict[str, float]:
    """Worst relative mismatch between each declared partial and central differences."""
    rng = np.random.default_rng(seed)
    _, s, x, v, u = _sample_states(model.domain, samples, box, rng)
    d = model.domain.dimension

    def rel(a, b):
        return float(np.max(np.abs(a - b) / (1.0 + np.abs(b))))

    out = {}
    out["L_u"] = rel(model.L_u(s, x, v, u), (model.L(s, x, v, u + step) - model.L(s, x, v, u - step)) / (2 * step))
    out["L_t"] = rel(model.L_t(s, x, v, u), (model.L(s + step, x, v, u) - model.L(s - step, x, v, u)) / (2 * step))
    for name, fn, arg in (("L_x", model.L_x, "x"), ("L_v", model.L_v, "v")):
        an = fn(s, x, v, u)
        fd = np.empty_like(an)
        for i in range(d):
            e = np.zeros(d)
            e[i] = step
            if arg == "x":
                fd[:, i] = (model.L(s, x + e, v, u) - model.L(s, x - e, v, u)) / (2 * step)
            else:
                fd[:, i] = (model.L(s, x, v + e, u) - model.L(s, x, v - e, u)) / (2 * step)
        out[name] = rel(an, fd)
    return out
