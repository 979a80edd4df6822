"""Builders for the three convex blocks solved in each outer iteration.

``objective="learning"`` minimizes the worst error surrogate; ``"throughput"``
maximizes the smallest per-device data volume (phi = -min_k A_k / 1 Mbit).
All constraint rows are normalized so that typical magnitudes are O(1):
sensing rows by the threshold, data rows by the device cap, mobility rows by
the squared step length.
"""

from __future__ import annotations

import numpy as np

from .. import _kernels
from ..bounds import Decision, radar_sinr_lb, rate_table, no_data_error
from ..scenario import ScenarioConfig, derive_constants
from .problem import (ComposedFamily, ConvexSubproblem, LinearOuter, LocalFamily, PowerOuter,
                      stack_linear)
from .surrogates import surrogate_coefficients

THROUGHPUT_UNIT = 1e6     # bits per unit of phi in the throughput objective
AUX_FLOOR = 1e-6          # m^2, closes the strict e > 0, u > 0 constraints
LN2 = np.log(2.0)


class SubproblemError(RuntimeError):
    """The expansion point does not admit a well-posed subproblem."""


def nominal_sizes(K: int, N: int, M: int) -> dict[str, int]:
    """Variable counts used in the complexity accounting of the three blocks."""
    return {
        "p3": 3 * K * N + M + N + K + 1,
        "p5": 3 * K * N + M + 3 * N + K + 1,
        "p7": K * N + M + 2 * N + K + 1,
    }


def _identity_kernel(xl):
    m = xl.shape[0]
    return xl[:, 0].copy(), np.ones((m, 1)), np.zeros((m, 1, 1))


def _phi_box(cfg, objective):
    if objective == "learning":
        ub = 1.01 * no_data_error(cfg)
        return -np.inf, ub
    if objective == "throughput":
        return -np.inf, np.inf
    raise ValueError(f"unknown objective {objective!r}")


def _phi_start(values: np.ndarray, ub: float) -> float:
    top = float(np.max(values))
    if np.isfinite(ub) and ub > top:
        return top + 0.5 * min(ub - top, 0.1 * abs(top) + 1e-3)
    return top + 0.1 * abs(top) + 1e-3


def _distances(cfg, Q):
    H = cfg.altitude
    q = np.asarray(Q, float)[1:]
    dt2 = H ** 2 + ((q - cfg.target_pos) ** 2).sum(axis=1)
    dk2 = H ** 2 + ((q[None] - cfg.device_pos[:, None]) ** 2).sum(axis=2)
    return dt2, dk2


# --- time allocation -------------------------------------------------------------

def build_p3(cfg: ScenarioConfig, Q_prev, p_prev, beta_prev=None, objective: str = "learning") -> ConvexSubproblem:
    """Time-share block with trajectory and power frozen.

    The sensing constraint is piecewise in ``beta > 0``; it is realized exactly
    as an admissibility mask: a pair whose uplink would push the echo SINR
    below threshold is removed from the variable vector (beta fixed to 0).
    """
    K, N, M = cfg.num_devices, cfg.num_slots, cfg.num_models
    delta = cfg.slot_len
    Q_prev = np.asarray(Q_prev, float)
    p_prev = np.asarray(p_prev, float)
    dec = Decision(np.zeros((K, N + 1)), Q_prev, p_prev)
    R = rate_table(cfg, dec)
    q = Q_prev[1:]
    ks = np.arange(K)[:, None]
    rad_act = radar_sinr_lb(cfg, q[None], p_prev[None], ks, 1.0)
    rad_idle = radar_sinr_lb(cfg, q, p_prev, 0, 0.0)
    gth = cfg.sensing_threshold
    if np.any(rad_idle < gth):
        raise SubproblemError("sensing constraint violated at the expansion point even without uplink")
    admissible = rad_act >= gth
    pairs = np.argwhere(admissible)            # (P, 2): device, slot-1
    P = len(pairs)
    n = P + 1
    iphi = P
    caps = cfg.device_cap_bits
    group = cfg.device_group
    vol = delta * R[pairs[:, 0], pairs[:, 1]] if P else np.zeros(0)

    rows = []
    for j in range(N):
        members = np.flatnonzero(pairs[:, 1] == j)
        if len(members) >= 2:
            rows.append(({int(i): 1.0 for i in members}, 1.0))
    for k in range(K):
        members = np.flatnonzero(pairs[:, 0] == k)
        if len(members):
            rows.append(({int(i): vol[i] / caps[k] for i in members}, 1.0))

    phi_lb, phi_ub = _phi_box(cfg, objective)
    families = []
    if objective == "learning":
        const = cfg.historical_samples.copy()
        for m in range(M):
            if cfg.error_exp[m] > 0 and const[m] <= 0 and not np.any(group[pairs[:, 0]] == m):
                raise SubproblemError(f"model {m + 1} has no admissible uplink and no prior data")
        fam = ComposedFamily(
            "error", n, M, term_row=group[pairs[:, 0]], term_weight=vol / cfg.sample_bits[group[pairs[:, 0]]],
            term_idx=np.arange(P)[:, None], term_kernel=_identity_kernel, const=const,
            outer=PowerOuter(cfg.error_coeff, cfg.error_exp), phi_index=iphi, phi_coef=-np.ones(M))
        families.append(fam)
    else:
        for k in range(K):
            members = np.flatnonzero(pairs[:, 0] == k)
            coefs = {int(i): -vol[i] / THROUGHPUT_UNIT for i in members}
            coefs[iphi] = -1.0
            rows.append((coefs, 0.0))
    A, b = stack_linear(rows, n)

    lb = np.concatenate([np.zeros(P), [phi_lb]])
    ub = np.concatenate([np.ones(P), [phi_ub]])

    # strictly interior start: blend the previous allocation with a centred one
    counts = np.bincount(pairs[:, 1], minlength=N) if P else np.zeros(N, int)
    center = 0.5 / counts[pairs[:, 1]] if P else np.zeros(0)
    for k in range(K):
        members = pairs[:, 0] == k
        load = (vol[members] * center[members]).sum()
        if load > 0.5 * caps[k]:
            center[members] *= 0.5 * caps[k] / load
    x0 = np.zeros(n)
    if beta_prev is not None and P:
        prev = np.clip(np.asarray(beta_prev, float)[pairs[:, 0], pairs[:, 1] + 1], 0.0, 1.0)
        x0[:P] = 0.9 * prev + 0.1 * center
    else:
        x0[:P] = center
    if objective == "learning":
        x0[iphi] = _phi_start(families[0].value(np.r_[x0[:P], 0.0]), phi_ub)
    else:
        S = np.bincount(pairs[:, 0], weights=vol * x0[:P], minlength=K) if P else np.zeros(K)
        x0[iphi] = _phi_start(-S / THROUGHPUT_UNIT, phi_ub)

    c = np.zeros(n)
    c[iphi] = 1.0
    return ConvexSubproblem(
        name="P3", n=n, blocks={"beta": slice(0, P), "phi": slice(P, P + 1)}, families=families,
        A=A, b=b, lb=lb, ub=ub, c=c, x0=x0,
        nominal_counts={"beta": K * N, "sensing_mask": K * N, "beta_box": K * N, "slot_share": N,
                        "error_rows": M, "data_availability": K, "phi": 1},
        meta={"pairs": pairs, "rates": R, "admissible": admissible, "objective": objective},
    )


def p3_decision(problem: ConvexSubproblem, x: np.ndarray, template: Decision) -> Decision:
    pairs = problem.meta["pairs"]
    beta = np.zeros_like(template.beta)
    if len(pairs):
        beta[pairs[:, 0], pairs[:, 1] + 1] = np.clip(x[problem.blocks["beta"]], 0.0, 1.0)
    return template.copy(beta=beta, phi=float(x[problem.phi_index]))


# --- power ---------------------------------------------------------------------------

def _rate_in_power_kernel(zeta, kappa, s2, bw):
    c = bw / LN2

    def kernel(xl):
        p = xl[:, 0]
        a = zeta * p + s2 + kappa
        d = zeta * p + s2
        with np.errstate(invalid="ignore", divide="ignore"):
            v = c * (np.log(a) - np.log(d))
            g = c * (zeta / a - zeta / d)
            h = c * (-zeta ** 2 / a ** 2 + zeta ** 2 / d ** 2)
        bad = (d <= 0) | (a <= 0)
        v = np.where(bad, np.nan, v)
        return v, g[:, None], h[:, None, None]

    return kernel


def rate_power_tangent(zeta, kappa, s2, bw, p_anchor):
    """Value and slope of the rate's tangent line in UAV power at ``p_anchor``.

    The rate ``B log2(1 + kappa / (zeta p + s2))`` is convex in ``p``, so the
    tangent is a global under-estimator.
    """
    c = bw / LN2
    a = zeta * p_anchor + s2 + kappa
    d = zeta * p_anchor + s2
    return c * (np.log(a) - np.log(d)), c * (zeta / a - zeta / d)


def power_floor(cfg: ScenarioConfig, beta, Q) -> np.ndarray:
    """Smallest per-slot UAV power meeting the sensing threshold (inf if unreachable)."""
    dc = derive_constants(cfg)
    beta = np.asarray(beta, float)
    dt2, dk2 = _distances(cfg, Q)
    gth = cfg.sensing_threshold
    act = beta[:, 1:] > 0
    interf = np.where(act, dc.lam_k[:, None] / dk2, 0.0).max(axis=0)
    den = dc.lam_t / dt2 ** 2 - gth * dc.lam_si
    with np.errstate(divide="ignore"):
        return np.where(den > 0, gth * (interf + cfg.noise_power) / np.where(den > 0, den, 1.0), np.inf)


def build_p7(cfg: ScenarioConfig, beta, Q, p_prev, objective: str = "learning") -> ConvexSubproblem:
    """Power block with time shares and trajectory frozen."""
    dc = derive_constants(cfg)
    K, N, M = cfg.num_devices, cfg.num_slots, cfg.num_models
    delta = cfg.slot_len
    beta = np.asarray(beta, float)
    p_prev = np.asarray(p_prev, float)
    pmax = cfg.uav_power_cap
    dt2, dk2 = _distances(cfg, Q)
    pmin = power_floor(cfg, beta, Q)
    if np.any(pmin > pmax):
        bad = int(np.argmax(pmin > pmax)) + 1
        raise SubproblemError(f"sensing threshold unreachable within the power cap in slot {bad}")
    n = N + 1
    iphi = N
    rows = [({j: -1.0 / pmax}, -pmin[j] / pmax) for j in range(N)]

    coef = surrogate_coefficients(cfg, Q, p_prev)
    pairs = np.argwhere(beta[:, 1:] > 0)
    kk, jj = pairs[:, 0], pairs[:, 1]
    zeta, kappa = coef.zeta[kk, jj], coef.kappa[kk, jj]
    w_beta = beta[kk, jj + 1] * delta
    group = cfg.device_group
    caps = cfg.device_cap_bits
    idx = jj[:, None]
    R0, slope = rate_power_tangent(zeta, kappa, cfg.noise_power, cfg.bandwidth, p_prev[jj])
    pp = p_prev[jj]

    def tangent_kernel(xl):
        m = xl.shape[0]
        return R0 + slope * (xl[:, 0] - pp), slope[:, None].copy(), np.zeros((m, 1, 1))

    phi_lb, phi_ub = _phi_box(cfg, objective)
    families = []
    if objective == "learning":
        families.append(ComposedFamily(
            "error", n, M, term_row=group[kk], term_weight=w_beta / cfg.sample_bits[group[kk]],
            term_idx=idx, term_kernel=tangent_kernel, const=cfg.historical_samples.copy(),
            outer=PowerOuter(cfg.error_coeff, cfg.error_exp), phi_index=iphi, phi_coef=-np.ones(M)))
    dev = np.unique(kk)
    if len(dev):
        row_of = {int(k): i for i, k in enumerate(dev)}
        trow = np.array([row_of[int(k)] for k in kk], dtype=int)
        families.append(ComposedFamily(
            "data_availability", n, len(dev), term_row=trow, term_weight=w_beta / caps[kk],
            term_idx=idx, term_kernel=_rate_in_power_kernel(zeta, kappa, cfg.noise_power, cfg.bandwidth),
            const=np.zeros(len(dev)), outer=LinearOuter(np.ones(len(dev)), -np.ones(len(dev)))))
    if objective == "throughput":
        if len(dev):
            families.append(ComposedFamily(
                "throughput", n, len(dev), term_row=trow, term_weight=w_beta, term_idx=idx,
                term_kernel=tangent_kernel, const=np.zeros(len(dev)),
                outer=LinearOuter(-np.ones(len(dev)) / THROUGHPUT_UNIT, np.zeros(len(dev))),
                phi_index=iphi, phi_coef=-np.ones(len(dev))))
        if len(dev) < K:
            rows.append(({iphi: -1.0}, 0.0))
    A, b = stack_linear(rows, n)
    lb = np.concatenate([np.zeros(N), [phi_lb]])
    ub = np.concatenate([np.full(N, pmax), [phi_ub]])
    x0 = np.concatenate([p_prev, [0.0]])
    obj_vals = [f.value(x0) for f in families if f.name in ("error", "throughput")]
    x0[iphi] = _phi_start(np.concatenate(obj_vals), phi_ub) if obj_vals else 0.0
    c = np.zeros(n)
    c[iphi] = 1.0
    return ConvexSubproblem(
        name="P7", n=n, blocks={"p": slice(0, N), "phi": slice(N, N + 1)}, families=families,
        A=A, b=b, lb=lb, ub=ub, c=c, x0=x0,
        nominal_counts={"sensing": K * N, "p": N, "power_cap": N, "error_rows": M,
                        "data_availability": K, "phi": 1},
        meta={"pairs": pairs, "power_floor": pmin, "tangent": (R0, slope), "objective": objective},
    )


def p7_decision(problem: ConvexSubproblem, x: np.ndarray, template: Decision) -> Decision:
    p = np.clip(x[problem.blocks["p"]], 0.0, None)
    return template.copy(p=p, phi=float(x[problem.phi_index]))


# --- trajectory ------------------------------------------------------------------------

class _PairKernels:
    """Per-pair surrogate rows of the trajectory block as functions of the waypoint offset.

    The auxiliaries only ever enter through terms that improve as they grow,
    so at any optimum they sit at their affine caps ``e = d_b(q, l_k)`` and
    ``u = d_b(q, t)``; they are substituted here rather than carried as
    variables.  Offsets where a cap drops below ``AUX_FLOOR`` are outside the
    domain (NaN).
    """

    def __init__(self, cfg, dc, Qp, pairs, p_slot, coef):
        kk, jj = pairs[:, 0], pairs[:, 1]
        self.q0 = Qp[jj + 1]
        self.lpos = cfg.device_pos[kk]
        self.tpos = np.asarray(cfg.target_pos, float)
        self.H2 = cfg.altitude ** 2
        self.D0l = self.H2 + ((self.q0 - self.lpos) ** 2).sum(axis=1)
        self.D0t = self.H2 + ((self.q0 - self.tpos) ** 2).sum(axis=1)
        self.ge = 2.0 * (self.q0 - self.lpos)
        self.gu = 2.0 * (self.q0 - self.tpos)
        self.p = p_slot[jj]
        self.phi = coef.varphi[kk, jj]
        self.rho = coef.rho[kk, jj]
        self.mu = coef.mu[kk, jj]
        self.nu = coef.nu[kk, jj]
        self.lk = dc.lam_k[kk]
        self.lt, self.lsi, self.s2 = dc.lam_t, dc.lam_si, cfg.noise_power
        self.gth = cfg.sensing_threshold
        self.bw = cfg.bandwidth
        self._cache = None

    def aux(self, dq):
        """Substituted auxiliaries (e, u) at waypoint offsets ``dq``."""
        return self.D0l + (self.ge * dq).sum(axis=1), self.D0t + (self.gu * dq).sum(axis=1)

    def _terms(self, dq):
        key = dq.tobytes()
        if self._cache is not None and self._cache[0] == key:
            return self._cache[1]
        e, u = self.aux(dq)
        out = _kernels.p5_pair_terms(self.q0 + dq, np.maximum(e, AUX_FLOOR), np.maximum(u, AUX_FLOOR),
                                     self.lpos, self.tpos, self.H2, self.D0l, self.D0t, self.p, self.phi,
                                     self.rho, self.nu, self.lk, self.lt, self.lsi, self.s2, self.gth)
        bad = (e < AUX_FLOOR) | (u < AUX_FLOOR)
        res = []
        for v, g, h, ga in ((out[0], out[1], out[2], self.ge), (out[3], out[4], out[5], self.gu),
                            (out[6], out[7], out[8], self.ge)):
            # chain rule through the affine auxiliary a(q) = a0 + ga . dq
            G = g[:, :2] + g[:, 2:3] * ga
            Hq = (h[:, :2, :2] + h[:, :2, 2:3] * ga[:, None, :] + ga[:, :, None] * h[:, 2:3, :2]
                  + h[:, 2, 2][:, None, None] * ga[:, :, None] * ga[:, None, :])
            v = np.where(bad, np.nan, v)
            res.append((v, G, Hq))
        self._cache = (key, res)
        return res

    def radar(self, xl):
        return self._terms(xl)[0]

    def rate_lo(self, xl):
        """Rate under-estimator; continued by its tangent ``c * v`` below ``v = 0``.

        The true rate is nonnegative, so the linear continuation stays a lower
        bound while keeping the row concave and finite over the whole domain.
        """
        v, g, h = self._terms(xl)[1]
        c = self.bw / LN2
        pos = v >= 0
        opv = 1.0 + np.where(pos, v, 0.0)
        r = c * np.where(pos, np.log(opv), v)
        gr = c * g / opv[:, None]
        curv = np.where(pos, 1.0, 0.0)[:, None, None] * g[:, :, None] * g[:, None, :] / (opv ** 2)[:, None, None]
        hr = c * (h / opv[:, None, None] - curv)
        return r, gr, hr

    def rate_hi(self, xl):
        v, g, h = self._terms(xl)[2]
        c = self.bw / LN2
        a = c * (1.0 - self.mu)
        hmu = self.mu + np.log1p(-self.mu)
        with np.errstate(invalid="ignore", divide="ignore"):
            r = np.where(v > 0, a / v - c * hmu, np.nan)
            gr = -(a / v ** 2)[:, None] * g
            hr = a[:, None, None] * (-h / (v ** 2)[:, None, None]
                                     + 2.0 * g[:, :, None] * g[:, None, :] / (v ** 3)[:, None, None])
        return r, gr, hr


def _idle_radar_kernel(q0, tpos, H2, D0t, p, phi, z, gth, lt):
    cl = np.sqrt(lt * p)

    def kernel(xl):
        q = q0 + xl
        dv = q - tpos
        D2 = H2 + (dv ** 2).sum(axis=1)
        da = 2.0 / D0t - D2 / D0t ** 2
        gs = 2.0 * phi * cl * da - phi ** 2 * z
        f = (gth - gs) / gth
        g = -2.0 * (phi * cl)[:, None] * (-2.0 * dv / (D0t ** 2)[:, None]) / gth
        hq = 4.0 * phi * cl / D0t ** 2 / gth
        h = hq[:, None, None] * np.eye(2)[None]
        return f, g, h

    return kernel


def _mobility_kernel(q_from, q_to, step):
    s2 = step ** 2

    def kernel(xl):
        dv = (q_to + xl[:, 2:4]) - (q_from + xl[:, 0:2])
        f = (dv ** 2).sum(axis=1) / s2 - 1.0
        g = np.concatenate([-2.0 * dv, 2.0 * dv], axis=1) / s2
        blk = np.block([[np.eye(2), -np.eye(2)], [-np.eye(2), np.eye(2)]]) * 2.0 / s2
        h = np.broadcast_to(blk, (len(f), 4, 4)).copy()
        return f, g, h

    return kernel


def _trust_kernel(radius):
    def kernel(xl):
        f = (xl ** 2).sum(axis=1) / radius ** 2 - 1.0
        g = 2.0 * xl / radius ** 2
        h = np.broadcast_to(np.eye(2) * 2.0 / radius ** 2, (len(f), 2, 2)).copy()
        return f, g, h

    return kernel


def build_p5(cfg: ScenarioConfig, beta, p, Q_prev, objective: str = "learning",
             trust_radius: float | None = None) -> ConvexSubproblem:
    """Trajectory block with time shares and power frozen.

    Waypoints 1..N-1 are free and stored as offsets from the expansion point;
    waypoints 0 and N sit at the depot.  The distance auxiliaries are
    substituted by their affine caps (see :class:`_PairKernels`).
    """
    dc = derive_constants(cfg)
    K, N, M = cfg.num_devices, cfg.num_slots, cfg.num_models
    delta = cfg.slot_len
    beta = np.asarray(beta, float)
    p = np.asarray(p, float)
    Qp = np.asarray(Q_prev, float)
    H2 = cfg.altitude ** 2
    gth = cfg.sensing_threshold
    coef = surrogate_coefficients(cfg, Qp, p)
    group = cfg.device_group
    caps = cfg.device_cap_bits

    act = beta[:, 1:] > 0                           # (K, N) over slots 1..N
    free_slot = np.zeros(N, bool)
    free_slot[: N - 1] = True                       # slot N sits at the depot
    pairs_all = np.argwhere(act)
    is_free = free_slot[pairs_all[:, 1]]
    pairs = pairs_all[is_free]                      # active pairs at free waypoints
    fixed_pairs = pairs_all[~is_free]
    P = len(pairs)
    F = N - 1
    nq = 2 * F
    iphi = nq
    n = nq + 1

    def qidx(j):  # columns of slot j+1's waypoint; -1 when it is pinned to the depot
        return (2 * j, 2 * j + 1) if free_slot[j] else (-1, -1)

    ker = _PairKernels(cfg, dc, Qp, pairs, p, coef) if P else None
    families = []
    rows = []
    if P:
        qcols = np.array([qidx(j) for j in pairs[:, 1]], dtype=int)
        families.append(LocalFamily("sensing", n, qcols, ker.radar))

    # sensing rows for slots where some device stays silent
    idle_slots = np.flatnonzero(free_slot & (~act).any(axis=0))
    if len(idle_slots):
        q0 = Qp[idle_slots + 1]
        D0t = H2 + ((q0 - cfg.target_pos) ** 2).sum(axis=1)
        pi = p[idle_slots]
        z = dc.lam_si * pi + cfg.noise_power
        phi_idle = np.sqrt(dc.lam_t * pi) / D0t / z
        idx = np.array([qidx(j) for j in idle_slots], dtype=int)
        families.append(LocalFamily(
            "sensing_idle", n, idx,
            _idle_radar_kernel(q0, np.asarray(cfg.target_pos, float), H2, D0t, pi, phi_idle, z, gth, dc.lam_t)))

    # mobility between consecutive waypoints 0..N
    step = cfg.v_max * delta
    mob_idx = np.full((N, 4), -1, dtype=int)
    for j in range(N):  # move into waypoint j+1 from waypoint j
        if j >= 1 and free_slot[j - 1]:
            mob_idx[j, 0:2] = qidx(j - 1)
        if free_slot[j]:
            mob_idx[j, 2:4] = qidx(j)
    mob_rows = np.flatnonzero((mob_idx >= 0).any(axis=1))
    if len(mob_rows):
        families.append(LocalFamily("mobility", n, mob_idx[mob_rows],
                                    _mobility_kernel(Qp[mob_rows], Qp[mob_rows + 1], step)))
    if trust_radius is not None and F:
        families.append(LocalFamily("trust", n, np.array([qidx(j) for j in range(F)]),
                                    _trust_kernel(trust_radius)))

    # the last slot's waypoint is pinned, so its pairs contribute constants
    fixed_rate = np.zeros(K)
    if len(fixed_pairs):
        R = rate_table(cfg, Decision(np.zeros_like(beta), Qp, p))
        for k, j in fixed_pairs:
            fixed_rate[k] += beta[k, j + 1] * delta * R[k, j]

    phi_lb, phi_ub = _phi_box(cfg, objective)
    kk = pairs[:, 0] if P else np.zeros(0, int)
    w = beta[kk, pairs[:, 1] + 1] * delta if P else np.zeros(0)
    tidx = qcols if P else np.zeros((0, 2), int)
    tker = ker.rate_lo if P else _identity_kernel
    if objective == "learning":
        const = cfg.historical_samples + np.array(
            [fixed_rate[list(g)].sum() for g in cfg.groups]) / cfg.sample_bits
        families.append(ComposedFamily(
            "error", n, M, term_row=group[kk], term_weight=w / cfg.sample_bits[group[kk]],
            term_idx=tidx, term_kernel=tker, const=const,
            outer=PowerOuter(cfg.error_coeff, cfg.error_exp), phi_index=iphi, phi_coef=-np.ones(M)))
    dev = np.unique(pairs_all[:, 0]) if len(pairs_all) else np.zeros(0, int)
    if len(dev):
        row_of = {int(k): i for i, k in enumerate(dev)}
        trow = np.array([row_of[int(k)] for k in kk], dtype=int)
        families.append(ComposedFamily(
            "data_availability", n, len(dev), term_row=trow, term_weight=w / caps[kk],
            term_idx=tidx, term_kernel=ker.rate_hi if P else _identity_kernel,
            const=np.array([fixed_rate[k] / caps[k] for k in dev]),
            outer=LinearOuter(np.ones(len(dev)), -np.ones(len(dev)))))
        if objective == "throughput":
            families.append(ComposedFamily(
                "throughput", n, len(dev), term_row=trow, term_weight=w, term_idx=tidx, term_kernel=tker,
                const=np.array([fixed_rate[k] for k in dev]),
                outer=LinearOuter(-np.ones(len(dev)) / THROUGHPUT_UNIT, np.zeros(len(dev))),
                phi_index=iphi, phi_coef=-np.ones(len(dev))))
    if objective == "throughput" and len(dev) < K:
        rows.append(({iphi: -1.0}, 0.0))

    A, b = stack_linear(rows, n)
    lb = np.full(n, -np.inf)
    ub = np.full(n, np.inf)
    lb[iphi], ub[iphi] = phi_lb, phi_ub
    x0 = np.zeros(n)
    obj_vals = [f.value(x0) for f in families if f.name in ("error", "throughput")]
    if not obj_vals:
        obj_vals = [np.zeros(1)]
    x0[iphi] = _phi_start(np.concatenate(obj_vals), phi_ub)
    c = np.zeros(n)
    c[iphi] = 1.0
    return ConvexSubproblem(
        name="P5", n=n, blocks={"q": slice(0, nq), "phi": slice(iphi, n)},
        families=families, A=A, b=b, lb=lb, ub=ub, c=c, x0=x0,
        nominal_counts={"E": K * N, "e_bound": K * N, "sensing": K * N, "U": N, "u_bound": N, "Q": N,
                        "error_rows": M, "data_availability": K, "phi": 1},
        meta={"pairs": pairs, "fixed_pairs": fixed_pairs, "Q_prev": Qp, "kernels": ker,
              "objective": objective, "eliminated": {"E": P, "U": len(np.unique(pairs[:, 1])) if P else 0}},
    )


def p5_auxiliaries(problem: ConvexSubproblem, x: np.ndarray):
    """Values the substituted auxiliaries take at ``x``: (pairs, e, u)."""
    ker = problem.meta["kernels"]
    pairs = problem.meta["pairs"]
    if ker is None:
        return pairs, np.zeros(0), np.zeros(0)
    dq = x[problem.blocks["q"]].reshape(-1, 2)[pairs[:, 1]]
    e, u = ker.aux(dq)
    return pairs, e, u


def p5_decision(problem: ConvexSubproblem, x: np.ndarray, template: Decision) -> Decision:
    Qp = problem.meta["Q_prev"]
    Q = Qp.copy()
    off = x[problem.blocks["q"]].reshape(-1, 2)
    Q[1:1 + len(off)] += off
    return template.copy(Q=Q, phi=float(x[problem.phi_index]))
