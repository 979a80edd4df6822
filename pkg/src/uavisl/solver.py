"""Log-barrier interior-point method for :class:`ConvexSubproblem` instances.

Damped Newton steps on ``t * c @ x - sum_i log(-g_i(x))`` where ``g`` stacks
the nonlinear families, the linear rows and the finite box bounds; ``t`` grows
geometrically until the duality-gap bound ``m / t`` is below the optimality
tolerance.  Multipliers ``1 / (t * -g_i)`` give the reported KKT residual.
Points outside a constraint's domain evaluate to NaN and are rejected by the
line search.  A Phase-I pass with a shared slack variable finds a strictly feasible
start when the warm start is not one.  The reduced Newton matrix is assembled
densely (a few hundred variables at most) and factorized with Cholesky after
Jacobi scaling.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Callable, TextIO

import numpy as np
from scipy import linalg, sparse

from .convexify.problem import ConvexSubproblem

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
ITERATION_LIMIT = "iteration-limit"


@dataclass(frozen=True)
class SolverSettings:
    feas_tol: float = 1e-8
    opt_tol: float = 1e-7
    max_iter: int = 1000
    t0: float = 1.0
    mu: float = 10.0
    armijo: float = 0.25
    backtrack: float = 0.5
    min_step: float = 1e-12
    newton_tol: float = 1e-10
    phase1_margin: float = 1e-4
    interior_frac: float = 1e-6

    def __post_init__(self):
        for name in ("feas_tol", "opt_tol", "max_iter", "t0", "newton_tol", "armijo", "backtrack",
                     "min_step", "phase1_margin", "interior_frac"):
            if not getattr(self, name) > 0:
                raise ValueError(f"solver setting {name} must be positive")
        if not self.mu > 1:
            raise ValueError("barrier growth factor mu must exceed 1")
        if not (self.armijo < 0.5 and self.backtrack < 1):
            raise ValueError("line-search parameters out of range")


@dataclass
class SolverOutcome:
    status: str
    x: np.ndarray
    phi: float
    max_violation: float
    iterations: int
    wall_time: float
    kkt_residual: float = float("nan")
    message: str = ""

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL

    def to_dict(self) -> dict:
        return {"status": self.status, "phi": float(self.phi), "max_violation": float(self.max_violation),
                "iterations": int(self.iterations), "wall_time": float(self.wall_time),
                "kkt_residual": float(self.kkt_residual), "message": self.message}


class _Rows:
    """All ``g(z) <= 0`` rows of a problem including box bounds.

    With ``slack`` the variable vector gains a trailing ``s`` that relaxes every
    non-box row (``g - s <= 0``) and is itself bounded below by -1.
    """

    def __init__(self, problem: ConvexSubproblem, slack: bool):
        self.p = problem
        self.slack = slack
        n = problem.n
        self.n = n + int(slack)
        self.m_core = sum(f.size for f in problem.families) + problem.A.shape[0]
        lb, ub = problem.lb, problem.ub
        self.ilb = np.flatnonzero(np.isfinite(lb))
        self.iub = np.flatnonzero(np.isfinite(ub))
        self.lbv, self.ubv = lb[self.ilb], ub[self.iub]
        nb = len(self.ilb) + len(self.iub) + int(slack)
        rows = np.arange(nb)
        cols = np.concatenate([self.ilb, self.iub, [n] if slack else []]).astype(int)
        vals = np.concatenate([-np.ones(len(self.ilb)), np.ones(len(self.iub)), [-1.0] if slack else []])
        self.Jbox = sparse.csr_matrix((vals, (rows, cols)), shape=(nb, self.n))
        self.m = self.m_core + nb

    def _box(self, z):
        parts = [self.lbv - z[self.ilb], z[self.iub] - self.ubv]
        if self.slack:
            parts.append([-1.0 - z[-1]])
        return np.concatenate(parts)

    def values(self, z):
        x = z[:self.p.n]
        parts = [f.value(x) for f in self.p.families]
        if self.p.A.shape[0]:
            parts.append(self.p.A @ x - self.p.b)
        g = np.concatenate(parts) if parts else np.zeros(0)
        if self.slack:
            g = g - z[-1]
        return np.concatenate([g, self._box(z)])

    def evaluate(self, z):
        x = z[:self.p.n]
        vals, jacs, hess = [], [], []
        for f in self.p.families:
            v, J, h = f.evaluate(x)
            vals.append(v)
            jacs.append(J)
            hess.append((f.size, h))
        if self.p.A.shape[0]:
            vals.append(self.p.A @ x - self.p.b)
            jacs.append(self.p.A)
        g = np.concatenate(vals) if vals else np.zeros(0)
        J = sparse.vstack(jacs, format="csr") if jacs else sparse.csr_matrix((0, self.p.n))
        if self.slack:
            g = g - z[-1]
            J = sparse.hstack([J, sparse.csr_matrix(-np.ones((J.shape[0], 1)))], format="csr")
        g = np.concatenate([g, self._box(z)])
        J = sparse.vstack([J, self.Jbox], format="csr")

        def hess_fn(w):
            out = np.zeros((self.n, self.n))
            k = 0
            for size, h in hess:
                out[:self.p.n, :self.p.n] += h(w[k:k + size])
                k += size
            return out

        return g, J, hess_fn


def _interior(x, lb, ub, frac):
    x = np.array(x, dtype=float)
    width = np.where(np.isfinite(lb) & np.isfinite(ub), ub - lb, 1.0)
    pad = frac * np.maximum(width, 1e-12)
    lo = np.where(np.isfinite(lb), lb + pad, -np.inf)
    hi = np.where(np.isfinite(ub), ub - pad, np.inf)
    return np.minimum(np.maximum(x, lo), hi)


def _factor_psd(H):
    """Return a solver for ``H x = rhs`` (Jacobi-scaled Cholesky, regularized if needed)."""
    d = np.sqrt(np.maximum(np.diag(H), 1e-300))
    Hs = H / d[:, None] / d[None, :]
    reg = 0.0
    for _ in range(12):
        try:
            cf = linalg.cho_factor(Hs + reg * np.eye(len(d)), lower=False, check_finite=True)
            return lambda rhs: linalg.cho_solve(cf, rhs / d) / d
        except (linalg.LinAlgError, ValueError):
            reg = 1e-12 if reg == 0.0 else reg * 100.0
    return lambda rhs: np.linalg.lstsq(H, rhs, rcond=None)[0]


def _barrier_value(rows: _Rows, cost, z, t):
    g = rows.values(z)
    if not (np.all(np.isfinite(g)) and np.all(g < 0)):
        return np.inf
    return t * float(cost @ z) - float(np.log(-g).sum())


def _initial_weight(rows: _Rows, cost: np.ndarray, z: np.ndarray, floor: float) -> float:
    """Barrier weight for which ``z`` is closest to central (least squares in the Newton metric)."""
    g, J, hess = rows.evaluate(z)
    w = 1.0 / (-g)
    JD = sparse.diags(w) @ J
    H = hess(w) + (JD.T @ JD).toarray()
    hc = _factor_psd(H)(cost)
    den = float(cost @ hc)
    if not (np.isfinite(den) and den > 0):
        return floor
    t = -float((J.T @ w) @ hc) / den
    return float(np.clip(t, floor, 1e-3 * rows.m / 1e-12)) if np.isfinite(t) else floor


def _barrier_method(rows: _Rows, cost: np.ndarray, z: np.ndarray, settings: SolverSettings, budget: int,
                    stop: Callable | None, trace: TextIO | None, tag: str, t0: float | None):
    """Return (z, iterations, converged, kkt_residual); ``t0=None`` picks the weight from ``z``."""
    t = _initial_weight(rows, cost, z, settings.t0) if t0 is None else t0
    it = 0
    scale = max(1.0, float(np.abs(cost).max()))
    while True:
        merit = _barrier_value(rows, cost, z, t)
        while True:
            if it >= budget:
                return z, it, False, float("nan")
            g, J, hess = rows.evaluate(z)
            w = 1.0 / (-g)
            grad = t * cost + J.T @ w
            H = hess(w)
            JD = sparse.diags(w) @ J
            H += (JD.T @ JD).toarray()
            dz = _factor_psd(H)(-grad)
            dec2 = float(-grad @ dz)
            if not np.isfinite(dec2) or dec2 / 2.0 <= settings.newton_tol:
                break
            s = 1.0
            # merit values carry roundoff of order eps * |merit|
            floor = 1e3 * np.finfo(float).eps * abs(merit)
            while s >= settings.min_step:
                cand = _barrier_value(rows, cost, z + s * dz, t)
                if cand <= merit - settings.armijo * s * dec2:
                    break
                if s * dec2 < floor:
                    s = 0.0
                    break
                s *= settings.backtrack
            it += 1
            if s < settings.min_step:
                break
            z = z + s * dz
            merit = cand
            if trace is not None:
                trace.write(f"{tag} it={it} t={t:.3e} merit={merit:.12e} step={s:.3e} dec2={dec2:.3e}\n")
            if stop is not None and stop(z):
                return z, it, True, float("nan")
        if stop is not None and stop(z):
            return z, it, True, float("nan")
        if rows.m / t < settings.opt_tol:
            # Lagrangian gradient with multipliers 1 / (t * -g), plus the gap bound
            return z, it, True, max(float(np.abs(grad).max()) / t / scale, rows.m / t)
        t *= settings.mu


def phase1(problem: ConvexSubproblem, settings: SolverSettings | None = None, start=None,
           trace: TextIO | None = None) -> SolverOutcome:
    """Find a strictly feasible point by minimizing a shared constraint slack.

    A start that is already strictly feasible is returned unchanged.
    """
    settings = settings or SolverSettings()
    t_start = time.perf_counter()
    x = _interior(problem.x0 if start is None else start, problem.lb, problem.ub, settings.interior_frac)
    rows = _Rows(problem, slack=False)
    g = rows.values(x)
    if np.all(np.isfinite(g)) and (g.size == 0 or g.max() < 0):
        return SolverOutcome(OPTIMAL, x, float(problem.c @ x), float(problem.max_violation(x)), 0,
                             time.perf_counter() - t_start, message="start already strictly feasible")
    if not np.all(np.isfinite(g)):
        return SolverOutcome(INFEASIBLE, x, float("nan"), float("inf"), 0, time.perf_counter() - t_start,
                             message="start outside the constraint domain")
    worst = float(g.max())
    z = np.concatenate([x, [worst + max(1e-3, 0.1 * abs(worst))]])
    cost = np.zeros(len(z))
    cost[-1] = 1.0
    margin = settings.phase1_margin
    srows = _Rows(problem, slack=True)
    z, it, _, _ = _barrier_method(srows, cost, z, settings, settings.max_iter,
                                  lambda zz: zz[-1] < -margin, trace, "phase1", t0=float(srows.m))
    x = z[:-1]
    g = rows.values(x)
    ok = bool(np.all(np.isfinite(g)) and (g.size == 0 or g.max() < 0))
    return SolverOutcome(OPTIMAL if ok else INFEASIBLE, x, float(problem.c @ x),
                         float(problem.max_violation(x)), it, time.perf_counter() - t_start,
                         message="" if ok else f"minimized slack {z[-1]:.3e} is not negative")


def solve(problem: ConvexSubproblem, warm_start=None, settings: SolverSettings | None = None,
          trace: TextIO | None = None) -> SolverOutcome:
    """Minimize ``c @ x`` over the problem's feasible set.

    ``kkt_residual`` is the larger of the scaled Lagrangian-gradient norm and
    the duality-gap bound at the returned point.
    """
    settings = settings or SolverSettings()
    t_start = time.perf_counter()
    x = problem.x0 if warm_start is None else warm_start
    p1 = phase1(problem, settings, start=x, trace=trace)
    if not p1.optimal:
        p1.wall_time = time.perf_counter() - t_start
        return p1
    rows = _Rows(problem, slack=False)
    z, it, converged, kkt = _barrier_method(rows, np.asarray(problem.c, float), p1.x, settings,
                                            settings.max_iter - p1.iterations, None, trace, "solve",
                                            t0=None)
    viol = float(problem.max_violation(z))
    status = OPTIMAL if converged and viol <= settings.feas_tol else ITERATION_LIMIT
    return SolverOutcome(status, z, float(problem.c @ z), viol, it + p1.iterations,
                         time.perf_counter() - t_start, kkt_residual=kkt)
