"""Closed-form SINR lower bounds, data volumes, error surrogate and feasibility audit.

Slot indexing: a :class:`Decision` carries ``N + 1`` waypoints ``Q[0..N]``
and a ``K x (N + 1)`` time-share grid whose column 0 is pinned to zero.
Transmit powers are stored for slots 1..N only, so ``p[n - 1]`` is the power
in slot ``n``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import exact
from .scenario import ScenarioConfig, derive_constants

AUDIT_TOL = 1e-9


@dataclass
class Decision:
    beta: np.ndarray   # (K, N+1)
    Q: np.ndarray      # (N+1, 2)
    p: np.ndarray      # (N,)
    phi: float = float("nan")

    def __post_init__(self):
        self.beta = np.array(self.beta, dtype=float)
        self.Q = np.array(self.Q, dtype=float)
        self.p = np.array(self.p, dtype=float)
        if self.beta.ndim != 2 or self.Q.shape != (self.beta.shape[1], 2) or \
                self.p.shape != (self.beta.shape[1] - 1,):
            raise ValueError("inconsistent Decision shapes")

    @property
    def num_slots(self) -> int:
        return self.p.shape[0]

    def copy(self, **changes) -> "Decision":
        kw = dict(beta=self.beta.copy(), Q=self.Q.copy(), p=self.p.copy(), phi=self.phi)
        kw.update(changes)
        return Decision(**kw)


def hover_decision(cfg: ScenarioConfig, p: float | np.ndarray) -> Decision:
    N, K = cfg.num_slots, cfg.num_devices
    return Decision(beta=np.zeros((K, N + 1)), Q=np.tile(cfg.depot_pos, (N + 1, 1)),
                    p=np.broadcast_to(np.asarray(p, dtype=float), (N,)).copy())


# --- pointwise bounds --------------------------------------------------------------

def _d2(cfg, q, g):
    q = np.asarray(q, dtype=float)
    return cfg.altitude ** 2 + ((q - np.asarray(g, dtype=float)) ** 2).sum(axis=-1)


def comm_sinr_lb(cfg: ScenarioConfig, q, p_uav, k):
    dc = derive_constants(cfg)
    k = np.asarray(k)
    dk2 = _d2(cfg, q, cfg.device_pos[k])
    dt2 = _d2(cfg, q, cfg.target_pos)
    zeta = (np.sqrt(dc.lam_t) / dt2 + np.sqrt(dc.lam_si)) ** 2
    return dc.lam_k[k] / dk2 / (zeta * np.asarray(p_uav) + cfg.noise_power)


def rate_lb(cfg: ScenarioConfig, q, p_uav, k):
    return cfg.bandwidth * np.log2(1.0 + comm_sinr_lb(cfg, q, p_uav, k))


def radar_sinr_lb(cfg: ScenarioConfig, q, p_uav, k, beta):
    """Echo SINR bound; device ``k`` interferes iff its time share ``beta > 0``."""
    dc = derive_constants(cfg)
    k = np.asarray(k)
    p_uav = np.asarray(p_uav, dtype=float)
    dk2 = _d2(cfg, q, cfg.device_pos[k])
    dt2 = _d2(cfg, q, cfg.target_pos)
    interf = np.where(np.asarray(beta) > 0, dc.lam_k[k] / dk2, 0.0)
    return dc.lam_t * p_uav / dt2 ** 2 / (interf + dc.lam_si * p_uav + cfg.noise_power)


def rate_table(cfg: ScenarioConfig, dec: Decision, use_exact: bool = False) -> np.ndarray:
    """Per-(device, slot) rates for slots 1..N, shape (K, N)."""
    K, N = cfg.num_devices, dec.num_slots
    q = np.repeat(dec.Q[None, 1:], K, axis=0).reshape(-1, 2)
    k = np.repeat(np.arange(K), N)
    p = np.tile(dec.p, K)
    if use_exact:
        comm, _ = exact.exact_sinr_batch(cfg, q, k, p)
        r = cfg.bandwidth * np.log2(1.0 + comm)
    else:
        r = rate_lb(cfg, q, p, k)
    return r.reshape(K, N)


def data_volume(cfg: ScenarioConfig, dec: Decision, k: int | None = None, use_exact: bool = False):
    """Bits delivered per device over the flight (all devices if ``k`` is None)."""
    vol = cfg.slot_len * (dec.beta[:, 1:] * rate_table(cfg, dec, use_exact)).sum(axis=1)
    return vol if k is None else float(vol[k])


def surrogate_from_volume(cfg: ScenarioConfig, volume: np.ndarray, m: int) -> float:
    a, b = cfg.error_coeff[m], cfg.error_exp[m]
    if b == 0:
        return float(a)
    base = volume[list(cfg.groups[m])].sum() / cfg.sample_bits[m] + cfg.historical_samples[m]
    if base <= 0:
        return float("inf")
    return float(a * base ** (-b))


def error_surrogate(cfg: ScenarioConfig, dec: Decision, m: int, use_exact: bool = False) -> float:
    return surrogate_from_volume(cfg, data_volume(cfg, dec, use_exact=use_exact), m)


def eta(cfg: ScenarioConfig, dec: Decision, use_exact: bool = False) -> float:
    vol = data_volume(cfg, dec, use_exact=use_exact)
    return max(surrogate_from_volume(cfg, vol, m) for m in range(cfg.num_models))


def no_data_error(cfg: ScenarioConfig) -> float:
    """Largest surrogate error when nothing is collected (may be +inf)."""
    vals = []
    for m in range(cfg.num_models):
        a, b, A = cfg.error_coeff[m], cfg.error_exp[m], cfg.historical_samples[m]
        vals.append(a if b == 0 else (a * A ** (-b) if A > 0 else np.inf))
    return float(max(vals))


# --- audit ---------------------------------------------------------------------------

@dataclass
class AuditReport:
    violations: dict[str, float]
    worst_index: dict[str, tuple]
    eta: float
    psi: np.ndarray
    data_bound: np.ndarray
    data_exact: np.ndarray
    min_radar_sinr: np.ndarray
    use_exact: bool
    tol: float = AUDIT_TOL
    notes: list[str] = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return all(v <= self.tol for v in self.violations.values())

    def failed(self) -> list[str]:
        return [k for k, v in self.violations.items() if v > self.tol]

    def to_dict(self) -> dict:
        return {
            "feasible": self.feasible,
            "use_exact": self.use_exact,
            "tolerance": self.tol,
            "violations": {k: float(v) for k, v in self.violations.items()},
            "worst_index": {k: [int(i) for i in v] for k, v in self.worst_index.items()},
            "eta": float(self.eta),
            "psi": [float(x) for x in self.psi],
            "data_bound_bits": [float(x) for x in self.data_bound],
            "data_exact_bits": [float(x) for x in self.data_exact],
            "min_radar_sinr": [float(x) for x in self.min_radar_sinr],
        }


def _worst(values: np.ndarray):
    flat = np.asarray(values, dtype=float)
    if flat.size == 0:
        return -np.inf, ()
    idx = np.unravel_index(int(np.argmax(flat)), flat.shape)
    return float(flat[idx]), tuple(int(i) for i in idx)


def radar_table(cfg: ScenarioConfig, dec: Decision, use_exact: bool = False) -> np.ndarray:
    """Sensing SINR per (device, slot 1..N), with the piecewise interference rule."""
    K, N = cfg.num_devices, dec.num_slots
    q = np.repeat(dec.Q[None, 1:], K, axis=0).reshape(-1, 2)
    k = np.repeat(np.arange(K), N)
    p = np.tile(dec.p, K)
    active = (dec.beta[:, 1:] > 0).reshape(-1)
    if use_exact:
        _, rad = exact.exact_sinr_batch(cfg, q, k, p, active=active)
    else:
        rad = radar_sinr_lb(cfg, q, p, k, active)
    return rad.reshape(K, N)


def audit(cfg: ScenarioConfig, dec: Decision, use_exact: bool = False, tol: float = AUDIT_TOL) -> AuditReport:
    """Signed worst violation of every constraint (relative units; <= 0 means satisfied).

    With ``use_exact`` the sensing and data-availability constraints use the
    exact array model, i.e. the original problem rather than its bound form.
    """
    N = dec.num_slots
    beta = dec.beta
    viol: dict[str, float] = {}
    where: dict[str, tuple] = {}

    def put(name, values):
        v, i = _worst(values)
        viol[name], where[name] = v, i

    put("beta_box", np.maximum(-beta, beta - 1.0))
    put("beta_slot0", np.abs(beta[:, 0]))
    put("slot_share", beta.sum(axis=0) - 1.0)
    rad = radar_table(cfg, dec, use_exact)
    put("radar", (cfg.sensing_threshold - rad) / cfg.sensing_threshold)
    vol_b = data_volume(cfg, dec)
    vol_e = data_volume(cfg, dec, use_exact=True)
    caps = cfg.device_cap_bits
    put("data_availability", ((vol_e if use_exact else vol_b) - caps) / caps)
    put("power", np.maximum(-dec.p, dec.p - cfg.uav_power_cap) / cfg.uav_power_cap)
    step = cfg.v_max * cfg.slot_len
    end = np.array([np.linalg.norm(dec.Q[0] - cfg.depot_pos), np.linalg.norm(dec.Q[N] - cfg.depot_pos)])
    put("endpoints", end / step)
    disp = np.linalg.norm(np.diff(dec.Q, axis=0), axis=1)
    v, i = _worst((disp - step) / step)
    viol["mobility"], where["mobility"] = v, (i[0] + 1,) if i else ()

    vol = vol_e if use_exact else vol_b
    psi = np.array([surrogate_from_volume(cfg, vol, m) for m in range(cfg.num_models)])
    return AuditReport(
        violations=viol, worst_index=where, eta=float(psi.max()), psi=psi, data_bound=vol_b,
        data_exact=vol_e, min_radar_sinr=rad.min(axis=0), use_exact=use_exact, tol=tol)
