"""Batched quasi-Newton minimisation.

Many small independent problems (one per curve) are advanced together so
that each objective evaluation is a single vectorised RK4 sweep.  Every
problem keeps its own inverse-Hessian approximation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CONVERGED = 0
MAX_ITER = 1
LINE_SEARCH_FAILED = 2
DIVERGED = 3

STATUS_NAMES = {CONVERGED: "converged", MAX_ITER: "max_iter",
                LINE_SEARCH_FAILED: "line_search_failed", DIVERGED: "diverged"}


@dataclass
class BatchMinimum:
    x: np.ndarray
    f: np.ndarray
    g: np.ndarray
    status: np.ndarray
    iterations: np.ndarray

    @property
    def converged(self) -> np.ndarray:
        return self.status == CONVERGED

    @property
    def grad_norm(self) -> np.ndarray:
        return np.max(np.abs(self.g), axis=1) if self.g.shape[1] else np.zeros(len(self.f))


def bfgs_batch(fun, x0, H0, grad_tol=1e-6, max_iter=200, max_step=None, ls_max=30, c1=1e-4):
    """Minimise ``B`` independent objectives.

    ``fun(X, idx)`` returns ``(f, g)`` for the rows ``idx`` (``X`` has one row
    per entry of ``idx``); non-finite ``f`` marks a trial point as infeasible.
    ``H0`` is the initial inverse Hessian, shape ``(n, n)`` or ``(B, n, n)``.
    ``max_step`` caps the sup-norm of each step.  Convergence means
    ``max|g| < grad_tol``.
    """
    x = np.array(x0, dtype=float, copy=True)
    B, n = x.shape
    H0 = np.asarray(H0, dtype=float)
    H0b = np.broadcast_to(H0, (B, n, n)) if H0.ndim == 2 else H0
    status = np.full(B, MAX_ITER, dtype=int)
    iters = np.zeros(B, dtype=int)
    allidx = np.arange(B)
    if n == 0:
        f, g = fun(x, allidx)
        status[np.isfinite(f)] = CONVERGED
        status[~np.isfinite(f)] = DIVERGED
        return BatchMinimum(x, f, g, status, iters)
    f, g = fun(x, allidx)
    f = np.asarray(f, dtype=float).copy()
    g = np.asarray(g, dtype=float).copy()
    H = np.array(H0b, copy=True)
    fresh = np.ones(B, dtype=bool)
    bad = ~np.isfinite(f)
    status[bad] = DIVERGED
    gn = np.max(np.abs(g), axis=1)
    status[~bad & (gn < grad_tol)] = CONVERGED
    active = status == MAX_ITER
    for _ in range(max_iter):
        A = np.flatnonzero(active)
        if A.size == 0:
            break
        gA = g[A]
        p = -np.einsum("bij,bj->bi", H[A], gA)
        slope = np.sum(p * gA, axis=1)
        reset = ~(slope < 0)
        if reset.any():
            R = A[reset]
            H[R] = H0b[R]
            fresh[R] = True
            p[reset] = -np.einsum("bij,bj->bi", H[R], gA[reset])
            slope[reset] = np.sum(p[reset] * gA[reset], axis=1)
        alpha = np.ones(A.size)
        if max_step is not None:
            pmax = np.max(np.abs(p), axis=1)
            big = pmax > max_step
            alpha[big] = max_step / pmax[big]
        xA, fA = x[A], f[A]
        x_new = xA.copy()
        f_new = fA.copy()
        g_new = gA.copy()
        ok_all = np.zeros(A.size, dtype=bool)
        pend = np.arange(A.size)
        for _ls in range(ls_max):
            trial = xA[pend] + alpha[pend, None] * p[pend]
            ft, gt = fun(trial, A[pend])
            ft = np.asarray(ft, dtype=float)
            armijo = fA[pend] + c1 * alpha[pend] * slope[pend]
            ok = np.isfinite(ft) & (ft <= armijo)
            acc = pend[ok]
            x_new[acc], f_new[acc], g_new[acc] = trial[ok], ft[ok], gt[ok]
            ok_all[acc] = True
            rej = pend[~ok]
            if rej.size == 0:
                break
            # safeguarded quadratic backtracking
            a = alpha[rej]
            fr = ft[~ok]
            denom = 2.0 * (fr - fA[rej] - slope[rej] * a)
            with np.errstate(divide="ignore", invalid="ignore"):
                aq = -slope[rej] * a * a / denom
            aq = np.where(np.isfinite(aq) & np.isfinite(fr), aq, 0.1 * a)
            alpha[rej] = np.clip(aq, 0.1 * a, 0.5 * a)
            pend = rej
        failed = A[~ok_all]
        # a stalled line search with a near-stationary gradient is a roundoff floor
        status[failed] = LINE_SEARCH_FAILED
        acc = np.flatnonzero(ok_all)
        Ia = A[acc]
        s = x_new[acc] - x[Ia]
        y = g_new[acc] - g[Ia]
        sy = np.sum(s * y, axis=1)
        upd = sy > 1e-12 * np.sqrt(np.sum(s * s, axis=1) * np.sum(y * y, axis=1))
        if upd.any():
            J = Ia[upd]
            su, yu, syu = s[upd], y[upd], sy[upd]
            Hj = H[J]
            first = fresh[J]
            if first.any():
                yHy = np.einsum("bi,bij,bj->b", yu[first], Hj[first], yu[first])
                Hj[first] *= (syu[first] / yHy)[:, None, None]
            rho = 1.0 / syu
            Hy = np.einsum("bij,bj->bi", Hj, yu)
            yHy = np.sum(yu * Hy, axis=1)
            Hj = (Hj - rho[:, None, None] * (Hy[:, :, None] * su[:, None, :] + su[:, :, None] * Hy[:, None, :])
                  + ((rho * rho * yHy + rho)[:, None, None]) * su[:, :, None] * su[:, None, :])
            H[J] = Hj
            fresh[J] = False
        x[Ia], f[Ia], g[Ia] = x_new[acc], f_new[acc], g_new[acc]
        iters[Ia] += 1
        gn = np.max(np.abs(g[Ia]), axis=1)
        status[Ia[gn < grad_tol]] = CONVERGED
        active = status == MAX_ITER
    return BatchMinimum(x, f, g, status, iters)
