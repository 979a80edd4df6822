"""Solver-agnostic description of a convex minimization instance.

Every nonlinear constraint is written ``f_i(x) <= 0`` with ``f_i`` convex on its
domain; outside the domain ``f_i`` evaluates to NaN.  Constraints come in
families that share structure:

* :class:`LocalFamily` - each row depends on a handful of variables through a
  vectorized kernel returning values, gradients and Hessians;
* :class:`ComposedFamily` - each row is ``F_j(S_j) + c_j * x[phi]`` where
  ``S_j = const_j + sum_t w_t r_t(x_local)`` and ``F_j`` is a scalar outer map.

Linear rows ``A x <= b`` and box bounds ``lb <= x <= ub`` are kept separately.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import sparse


def _scatter_square(n: int, idx: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Dense n x n sum of local L x L blocks ``h`` placed at ``idx`` (-1 = dropped)."""
    m, L = idx.shape
    ia = np.repeat(idx[:, :, None], L, axis=2)
    ib = np.repeat(idx[:, None, :], L, axis=1)
    ok = (ia >= 0) & (ib >= 0) & np.isfinite(h) & (h != 0)
    lin = ia[ok] * n + ib[ok]
    return np.bincount(lin, weights=h[ok], minlength=n * n).reshape(n, n)


def _sparse_rows(rows: np.ndarray, idx: np.ndarray, g: np.ndarray, shape) -> sparse.csr_matrix:
    m, L = idx.shape
    r = np.repeat(rows[:, None], L, axis=1)
    ok = idx >= 0
    return sparse.csr_matrix((g[ok], (r[ok], idx[ok])), shape=shape)


class Family:
    name: str
    size: int

    def value(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def evaluate(self, x: np.ndarray):
        """Return ``(f, J, hess)`` where ``hess(w)`` gives the dense sum of ``w_i * Hess f_i``."""
        raise NotImplementedError


class LocalFamily(Family):
    """Rows ``f_i(x[idx_i] * scale_i)``; entries with ``idx == -1`` take ``fixed`` values."""

    def __init__(self, name: str, n: int, idx, kernel: Callable, fixed=None, scale=None):
        self.name = name
        self.n = n
        self.idx = np.asarray(idx, dtype=int)
        self.size = self.idx.shape[0]
        self.kernel = kernel
        self.fixed = np.zeros(self.idx.shape) if fixed is None else np.asarray(fixed, dtype=float)
        self.scale = np.ones(self.idx.shape) if scale is None else np.asarray(scale, dtype=float)

    def local(self, x):
        return np.where(self.idx >= 0, x[np.maximum(self.idx, 0)] * self.scale, self.fixed)

    def value(self, x):
        return self.kernel(self.local(x))[0]

    def evaluate(self, x):
        f, g, h = self.kernel(self.local(x))
        g = g * self.scale
        h = h * self.scale[:, :, None] * self.scale[:, None, :]
        J = _sparse_rows(np.arange(self.size), self.idx, g, (self.size, self.n))

        def hess(w):
            return _scatter_square(self.n, self.idx, h * np.asarray(w)[:, None, None])

        return f, J, hess


class PowerOuter:
    """F(S) = a * S**(-b); NaN for S <= 0 unless b == 0."""

    def __init__(self, a, b):
        self.a = np.asarray(a, dtype=float)
        self.b = np.asarray(b, dtype=float)

    def __call__(self, S):
        a, b = self.a, self.b
        with np.errstate(invalid="ignore", divide="ignore"):
            Sp = np.where(S > 0, S, np.nan)
            F = np.where(b == 0, a, a * Sp ** (-b))
            d1 = np.where(b == 0, 0.0, -a * b * Sp ** (-b - 1))
            d2 = np.where(b == 0, 0.0, a * b * (b + 1) * Sp ** (-b - 2))
        return F, d1, d2


class LinearOuter:
    """F(S) = slope * S + offset."""

    def __init__(self, slope, offset):
        self.slope = np.asarray(slope, dtype=float)
        self.offset = np.asarray(offset, dtype=float)

    def __call__(self, S):
        return self.slope * S + self.offset, self.slope * np.ones_like(S), np.zeros_like(S)


class ComposedFamily(Family):
    def __init__(self, name: str, n: int, rows: int, term_row, term_weight, term_idx, term_kernel,
                 const, outer, phi_index: int | None = None, phi_coef=None,
                 term_fixed=None, term_scale=None):
        self.name = name
        self.n = n
        self.size = rows
        self.term_row = np.asarray(term_row, dtype=int)
        self.term_weight = np.asarray(term_weight, dtype=float)
        self.term = LocalFamily(name + ".terms", n, term_idx, term_kernel, term_fixed, term_scale)
        self.const = np.asarray(const, dtype=float)
        self.outer = outer
        self.phi_index = phi_index
        self.phi_coef = np.zeros(rows) if phi_coef is None else np.asarray(phi_coef, dtype=float)

    def inner(self, x):
        r = self.term.value(x)
        return self.const + np.bincount(self.term_row, weights=self.term_weight * r, minlength=self.size)

    def _phi(self, x):
        return 0.0 if self.phi_index is None else x[self.phi_index]

    def value(self, x):
        F, _, _ = self.outer(self.inner(x))
        return F + self.phi_coef * self._phi(x)

    def evaluate(self, x):
        n = self.n
        if self.term.size:
            r, g, h = self.term.kernel(self.term.local(x))
        else:
            L = self.term.idx.shape[1]
            r, g, h = np.zeros(0), np.zeros((0, L)), np.zeros((0, L, L))
        sc = self.term.scale
        g = g * sc
        h = h * sc[:, :, None] * sc[:, None, :]
        S = self.const + np.bincount(self.term_row, weights=self.term_weight * r, minlength=self.size)
        F, d1, d2 = self.outer(S)
        f = F + self.phi_coef * self._phi(x)
        gradS = _sparse_rows(self.term_row, self.term.idx, g * self.term_weight[:, None], (self.size, n))
        J = sparse.diags(d1) @ gradS
        if self.phi_index is not None:
            J = J + sparse.csr_matrix((self.phi_coef, (np.arange(self.size), np.full(self.size, self.phi_index))),
                                      shape=(self.size, n))
        J = sparse.csr_matrix(J)

        def hess(w):
            w = np.asarray(w, dtype=float)
            out = np.zeros((n, n))
            dense_grad = gradS.toarray()
            for j in range(self.size):
                c = w[j] * d2[j]
                if c != 0:
                    out += c * np.outer(dense_grad[j], dense_grad[j])
            tw = (w * d1)[self.term_row] * self.term_weight
            if h.size:
                out += _scatter_square(n, self.term.idx, h * tw[:, None, None])
            return out

        return f, J, hess


@dataclass
class ConvexSubproblem:
    """minimize c @ x  s.t.  families f(x) <= 0,  A x <= b,  lb <= x <= ub."""

    name: str
    n: int
    blocks: dict[str, slice]
    families: list[Family]
    A: sparse.csr_matrix
    b: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    c: np.ndarray
    x0: np.ndarray
    nominal_counts: dict[str, int] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def phi_index(self) -> int:
        return self.blocks["phi"].start

    @property
    def nominal_size(self) -> int:
        return int(sum(self.nominal_counts.values()))

    @property
    def num_constraints(self) -> int:
        return sum(f.size for f in self.families) + self.A.shape[0] + \
            int(np.isfinite(self.lb).sum() + np.isfinite(self.ub).sum())

    def family(self, name: str) -> Family:
        for f in self.families:
            if f.name == name:
                return f
        raise KeyError(name)

    def block(self, x: np.ndarray, name: str) -> np.ndarray:
        return x[self.blocks[name]]

    def violations(self, x: np.ndarray) -> dict[str, np.ndarray]:
        """Signed constraint values by group (<= 0 means satisfied; NaN = outside domain)."""
        out = {f.name: f.value(x) for f in self.families}
        if self.A.shape[0]:
            out["linear"] = self.A @ x - self.b
        out["lower"] = (self.lb - x)[np.isfinite(self.lb)]
        out["upper"] = (x - self.ub)[np.isfinite(self.ub)]
        return out

    def max_violation(self, x: np.ndarray) -> float:
        worst = -np.inf
        for v in self.violations(x).values():
            if v.size:
                if np.any(np.isnan(v)):
                    return np.inf
                worst = max(worst, float(v.max()))
        return worst


def stack_linear(rows: list[tuple[dict[int, float], float]], n: int):
    """Build (A, b) from ``[({col: coef}, rhs), ...]``."""
    if not rows:
        return sparse.csr_matrix((0, n)), np.zeros(0)
    r, c, v, b = [], [], [], []
    for i, (coefs, rhs) in enumerate(rows):
        for j, a in coefs.items():
            r.append(i)
            c.append(j)
            v.append(a)
        b.append(rhs)
    return sparse.csr_matrix((v, (r, c)), shape=(len(rows), n)), np.asarray(b, dtype=float)
