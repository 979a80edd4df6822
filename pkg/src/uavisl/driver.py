"""Outer block-coordinate loop, initialization, final repair and the two baselines.

Each outer iteration solves the time-share, trajectory and power blocks in
turn.  A block result replaces the current iterate only if the solver
reports optimality, the new point passes the bound-model audit and the
tracked objective does not increase.  Otherwise the previous block value is
kept.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import bounds
from .bounds import Decision, audit, data_volume, eta, hover_decision, radar_sinr_lb
from .convexify.builders import (THROUGHPUT_UNIT, SubproblemError, build_p3, build_p5, build_p7,
                                 nominal_sizes, p3_decision, p5_decision, p7_decision)
from .scenario import ScenarioConfig, derive_constants
from .solver import SolverSettings, solve

log = logging.getLogger(__name__)

BLOCKS = ("p3", "p5", "p7")
CONVERGED = "converged"
MAX_ITERATIONS = "max-iterations"
BLOCK_FAILURE = "block-failure"


class InitializationError(RuntimeError):
    """No feasible starting point; ``constraint`` names the binding constraint."""

    def __init__(self, message: str, constraint: str):
        super().__init__(message)
        self.constraint = constraint


@dataclass
class InitialPoint:
    Q: np.ndarray
    p: np.ndarray
    beta: np.ndarray

    def decision(self) -> Decision:
        return Decision(self.beta, self.Q, self.p)


@dataclass(frozen=True)
class BCDSettings:
    max_iters: int = 100
    tol: float | None = None          # defaults to the scenario's bcd_tol
    relative_tol: bool = False        # compare |delta| against tol * |objective|
    descent_slack: float = 1e-12
    snap_tol: float = 1e-6            # time shares below this are zeroed after the P3 block
    trust_fraction: float = 0.5       # retry radius for a failed trajectory block, in max steps
    blocks: tuple[str, ...] = BLOCKS
    solver: SolverSettings = field(default_factory=SolverSettings)

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.tol is not None and not self.tol > 0:
            raise ValueError("tol must be positive")
        if not set(self.blocks) <= set(BLOCKS) or not self.blocks:
            raise ValueError(f"blocks must be a nonempty subset of {BLOCKS}")


@dataclass
class BlockRecord:
    iteration: int
    block: str
    status: str
    accepted: bool
    objective_before: float
    objective_after: float
    wall_time: float
    solver: dict = field(default_factory=dict)
    audit_feasible: bool = True
    note: str = ""

    def to_dict(self) -> dict:
        return {"iteration": self.iteration, "block": self.block, "status": self.status,
                "accepted": self.accepted, "objective_before": float(self.objective_before),
                "objective_after": float(self.objective_after), "wall_time": float(self.wall_time),
                "audit_feasible": self.audit_feasible, "note": self.note, "solver": self.solver}


@dataclass
class RunReport:
    algorithm: str
    objective: str
    sensing_threshold: float
    eta_trace: list[float]
    objective_trace: list[float]
    records: list[BlockRecord]
    initial: Decision
    final: Decision
    rectified: Decision
    p2_audit: bounds.AuditReport
    p1_audit: bounds.AuditReport
    termination: str
    iterations: int
    wall_time: float
    tol: float
    cfg: ScenarioConfig | None = field(default=None, repr=False)
    failure: str = ""
    sizes: dict = field(default_factory=dict)

    @property
    def eta_final(self) -> float:
        return self.eta_trace[-1]

    def block_times(self) -> list[dict[str, float]]:
        """Per-iteration wall time of each block (iteration 0 has none)."""
        out = [dict() for _ in range(self.iterations + 1)]
        for r in self.records:
            out[r.iteration][r.block] = out[r.iteration].get(r.block, 0.0) + r.wall_time
        return out

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "objective": self.objective,
            "sensing_threshold": self.sensing_threshold,
            "termination": self.termination,
            "failure": self.failure,
            "iterations": self.iterations,
            "tol": self.tol,
            "wall_time": self.wall_time,
            "eta_initial": self.eta_trace[0],
            "eta_final": self.eta_final,
            "eta_rectified": float(self.p1_audit.eta),
            "eta_trace": [float(v) for v in self.eta_trace],
            "objective_trace": [float(v) for v in self.objective_trace],
            "collected_fraction": self.collected_fraction(),
            "audit_p2": self.p2_audit.to_dict(),
            "audit_p1": self.p1_audit.to_dict(),
            "sizes": self.sizes,
            "blocks": [r.to_dict() for r in self.records],
        }

    def collected_fraction(self) -> list[float]:
        """Share of each device's stored samples delivered by the rectified decision (exact model)."""
        return [float(v) for v in self.p1_audit.data_exact / self.cfg.device_cap_bits]


# --- initialization ------------------------------------------------------------------

def _depot_power(cfg: ScenarioConfig, margin: float, with_uplink: bool) -> float:
    """Smallest hover power at the depot meeting ``(1 + margin) * threshold``."""
    dc = derive_constants(cfg)
    q = cfg.depot_pos
    H2 = cfg.altitude ** 2
    dt2 = H2 + float(((q - cfg.target_pos) ** 2).sum())
    interf = float((dc.lam_k / (H2 + ((q - cfg.device_pos) ** 2).sum(axis=1))).max()) if with_uplink else 0.0
    g = cfg.sensing_threshold * (1.0 + margin)
    den = dc.lam_t / dt2 ** 2 - g * dc.lam_si
    return g * (interf + cfg.noise_power) / den if den > 0 else np.inf


def initialize(cfg: ScenarioConfig, margin: float = 0.01) -> InitialPoint:
    """Hover at the depot with the smallest power that lets every device upload.

    If no power within the cap admits every device, the cap is used and only
    devices whose uplink keeps the sensing threshold are scheduled.  Each slot
    gives half its time to the admissible devices in equal parts, scaled down
    where a device would exceed half its data cap.
    """
    pmax = cfg.uav_power_cap
    p_all = _depot_power(cfg, margin, with_uplink=True)
    if p_all <= pmax:
        p0 = p_all
    else:
        p_idle = _depot_power(cfg, 0.0, with_uplink=False)
        if not p_idle <= pmax:
            raise InitializationError(
                f"sensing threshold {cfg.sensing_threshold:.4g} unreachable at the depot within the "
                f"power cap {pmax:.4g} W", constraint="radar")
        p0 = pmax
    dec = hover_decision(cfg, p0)
    try:
        prob = build_p3(cfg, dec.Q, dec.p)
    except SubproblemError as exc:
        raise InitializationError(str(exc), constraint="radar") from exc
    dec = p3_decision(prob, prob.x0, dec)
    rep = audit(cfg, dec)
    if not rep.feasible:
        raise InitializationError(f"initial point fails audit: {rep.failed()}", constraint=rep.failed()[0])
    return InitialPoint(Q=dec.Q, p=dec.p, beta=dec.beta)


def max_initializable_threshold(cfg: ScenarioConfig, margin: float = 0.01, rel_tol: float = 1e-9) -> float:
    """Largest sensing threshold for which :func:`initialize` schedules every device.

    Found by bisection on the threshold; the returned value always initializes.
    """
    def ok(g):
        c = cfg.with_updates(sensing_threshold=g)
        if _depot_power(c, margin, with_uplink=True) > c.uav_power_cap:
            return False
        try:
            initialize(c, margin)
        except InitializationError:
            return False
        return True

    # the idle echo SINR at full power bounds every initializable threshold
    dc = derive_constants(cfg)
    dt2 = cfg.altitude ** 2 + float(((cfg.depot_pos - cfg.target_pos) ** 2).sum())
    pmax = cfg.uav_power_cap
    hi = dc.lam_t * pmax / dt2 ** 2 / (dc.lam_si * pmax + cfg.noise_power)
    lo = hi * 1e-6
    if not ok(lo):
        raise InitializationError("no initializable sensing threshold", constraint="radar")
    while hi - lo > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


# --- block updates -------------------------------------------------------------------

def throughput_objective(cfg: ScenarioConfig, dec: Decision) -> float:
    """Negated smallest per-device data volume, in units of the throughput scale."""
    return -float(data_volume(cfg, dec).min()) / THROUGHPUT_UNIT


def _objective_fn(objective: str):
    if objective == "learning":
        return eta
    if objective == "throughput":
        return throughput_objective
    raise ValueError(f"unknown objective {objective!r}")


def _snap(dec: Decision, tol: float) -> Decision:
    beta = dec.beta.copy()
    beta[beta < tol] = 0.0
    return dec.copy(beta=beta)


def _build(cfg, block, dec, objective, trust_radius=None):
    if block == "p3":
        prob = build_p3(cfg, dec.Q, dec.p, dec.beta, objective=objective)
        return prob, p3_decision
    if block == "p5":
        prob = build_p5(cfg, dec.beta, dec.p, dec.Q, objective=objective, trust_radius=trust_radius)
        return prob, p5_decision
    prob = build_p7(cfg, dec.beta, dec.Q, dec.p, objective=objective)
    return prob, p7_decision


def _run_block(cfg, block, dec, objective, settings: BCDSettings, iteration: int, obj_fn):
    """Solve one block; return (new decision or None, BlockRecord)."""
    before = obj_fn(cfg, dec)
    t0 = time.perf_counter()
    attempts = [None]
    if block == "p5":
        attempts.append(settings.trust_fraction * cfg.v_max * cfg.slot_len)
    note = ""
    for radius in attempts:
        try:
            prob, to_decision = _build(cfg, block, dec, objective, radius)
        except SubproblemError as exc:
            note = str(exc)
            status, outcome = "build-error", None
            continue
        outcome = solve(prob, settings=settings.solver)
        status = outcome.status
        if outcome.optimal:
            break
        note = outcome.message or status
    wall = time.perf_counter() - t0
    if outcome is None or not outcome.optimal:
        rec = BlockRecord(iteration, block, status, False, before, before, wall,
                          outcome.to_dict() if outcome else {}, note=note)
        return None, rec
    cand = to_decision(prob, outcome.x, dec)
    if block == "p3" and settings.snap_tol > 0:
        snapped = _snap(cand, settings.snap_tol)
        if obj_fn(cfg, snapped) <= before + settings.descent_slack and audit(cfg, snapped).feasible:
            cand = snapped
    after = obj_fn(cfg, cand)
    rep = audit(cfg, cand)
    accepted = rep.feasible and after <= before + settings.descent_slack
    if not rep.feasible:
        note = f"audit failed: {rep.failed()}"
    elif not accepted:
        note = f"objective rose by {after - before:.3e}"
    if radius is not None:
        note = (note + "; " if note else "") + f"trust radius {radius:g} m"
    rec = BlockRecord(iteration, block, status, accepted, before, after if accepted else before, wall,
                      outcome.to_dict(), audit_feasible=rep.feasible, note=note)
    return (cand if accepted else None), rec


def rectify(cfg: ScenarioConfig, dec: Decision) -> Decision:
    """Scale down the time shares of every device whose exact data volume exceeds its cap."""
    vol = data_volume(cfg, dec, use_exact=True)
    caps = cfg.device_cap_bits
    beta = dec.beta.copy()
    over = vol > caps
    beta[over] *= (caps[over] / vol[over])[:, None]
    return dec.copy(beta=beta)


def run_bcd(cfg: ScenarioConfig, init: InitialPoint | None = None, settings: BCDSettings | None = None,
            objective: str = "learning", algorithm: str = "proposed") -> RunReport:
    settings = settings or BCDSettings()
    init = init or initialize(cfg)
    obj_fn = _objective_fn(objective)
    tol = cfg.bcd_tol if settings.tol is None else settings.tol
    t_start = time.perf_counter()
    dec = init.decision()
    start_audit = audit(cfg, dec)
    if not start_audit.feasible:
        raise InitializationError(f"initial point fails audit: {start_audit.failed()}",
                                  constraint=start_audit.failed()[0])
    obj_trace = [obj_fn(cfg, dec)]
    eta_trace = [eta(cfg, dec)]
    records: list[BlockRecord] = []
    termination, failure = MAX_ITERATIONS, ""
    it = 0
    for it in range(1, settings.max_iters + 1):
        for block in settings.blocks:
            new, rec = _run_block(cfg, block, dec, objective, settings, it, obj_fn)
            records.append(rec)
            log.debug("iter %d %s %s accepted=%s obj=%.10g (%.2fs) %s", it, block, rec.status, rec.accepted,
                      rec.objective_after, rec.wall_time, rec.note)
            if new is not None:
                dec = new
            elif rec.status != "optimal":
                failure = f"{block} at iteration {it}: {rec.note}"
                termination = BLOCK_FAILURE
                break
        obj_trace.append(obj_fn(cfg, dec))
        eta_trace.append(eta(cfg, dec))
        log.info("%s iteration %d: objective %.10g eta %.10g", algorithm, it, obj_trace[-1], eta_trace[-1])
        if termination == BLOCK_FAILURE:
            break
        delta = abs(obj_trace[-2] - obj_trace[-1])
        scale = abs(obj_trace[-1]) if settings.relative_tol else 1.0
        if delta < tol * scale:
            termination = CONVERGED
            break
    fixed = rectify(cfg, dec)
    K, N, M = cfg.num_devices, cfg.num_slots, cfg.num_models
    return RunReport(
        algorithm=algorithm, objective=objective, sensing_threshold=cfg.sensing_threshold,
        eta_trace=eta_trace, objective_trace=obj_trace, records=records, initial=init.decision(),
        final=dec, rectified=fixed, p2_audit=audit(cfg, dec), p1_audit=audit(cfg, fixed, use_exact=True),
        termination=termination, iterations=it, wall_time=time.perf_counter() - t_start, tol=tol,
        cfg=cfg, failure=failure, sizes=nominal_sizes(K, N, M))


def run_tmax(cfg: ScenarioConfig, init: InitialPoint | None = None,
             settings: BCDSettings | None = None) -> RunReport:
    """Baseline: same loop, maximizing the smallest per-device data volume."""
    settings = settings or BCDSettings(relative_tol=True)
    return run_bcd(cfg, init, settings, objective="throughput", algorithm="tmax")


def constp_initial_point(cfg: ScenarioConfig, init: InitialPoint) -> InitialPoint:
    """``init`` with the power raised to the cap and time shares re-centred."""
    dec = init.decision().copy(p=np.full(cfg.num_slots, cfg.uav_power_cap), beta=np.zeros_like(init.beta))
    prob = build_p3(cfg, dec.Q, dec.p)
    dec = p3_decision(prob, prob.x0, dec)
    return InitialPoint(Q=dec.Q, p=dec.p, beta=dec.beta)


def run_constp(cfg: ScenarioConfig, init: InitialPoint | None = None,
               settings: BCDSettings | None = None) -> RunReport:
    """Baseline: power fixed at the cap, alternating time shares and trajectory only."""
    settings = settings or BCDSettings()
    init = constp_initial_point(cfg, init or initialize(cfg))
    blocks = tuple(b for b in settings.blocks if b != "p7")
    s = BCDSettings(**{**settings.__dict__, "blocks": blocks})
    return run_bcd(cfg, init, s, objective="learning", algorithm="constp")


ALGORITHMS = {"proposed": run_bcd, "tmax": run_tmax, "constp": run_constp}


def run_algorithm(name: str, cfg: ScenarioConfig, init: InitialPoint | None = None,
                  settings: BCDSettings | None = None) -> RunReport:
    if name not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {name!r}")
    return ALGORITHMS[name](cfg, init, settings)


def admissible_at(cfg: ScenarioConfig, q, p) -> np.ndarray:
    """Devices whose uplink at waypoint ``q`` keeps the echo SINR above threshold."""
    return radar_sinr_lb(cfg, q, p, np.arange(cfg.num_devices), 1.0) >= cfg.sensing_threshold
