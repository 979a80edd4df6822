"""Array-level line-of-sight signal model.

This is the ground truth that the closed-form lower bounds in
:mod:`uavisl.bounds` are checked against.  Conventions:

* steering vector entries are ``exp(-j*pi*i*H/d)``, i = 0..N_a-1 (the
  conjugate of the row vector ``[1, e^{j pi H/d}, ...]``);
* the sensing beam is ``x = sqrt(p/N_a) * a(q, t)``;
* the self-interference matrix is indexed (receive q, transmit p), see
  :func:`uavisl._kernels.si_matrix`.
"""

from __future__ import annotations

import numpy as np

from . import _kernels
from .scenario import ScenarioConfig


def distance(q, g, altitude: float):
    q = np.asarray(q, dtype=float)
    g = np.asarray(g, dtype=float)
    return np.sqrt(altitude ** 2 + ((q - g) ** 2).sum(axis=-1))


def steering_vector(q, g, altitude: float, num_antennas: int) -> np.ndarray:
    c = altitude / distance(q, g, altitude)
    return np.exp(-1j * np.pi * np.arange(num_antennas) * c)


def si_matrix(cfg: ScenarioConfig) -> np.ndarray:
    return _kernels.si_matrix(cfg.num_antennas, cfg.si_coeff, cfg.wavelength)


def radar_channel(cfg: ScenarioConfig, q) -> np.ndarray:
    """Round-trip matrix sqrt(lambda0 xi d^-4) a(q,t) a(q,t)^H."""
    a = steering_vector(q, cfg.target_pos, cfg.altitude, cfg.num_antennas)
    d = distance(q, cfg.target_pos, cfg.altitude)
    return np.sqrt(cfg.ref_gain * cfg.rcs / d ** 4) * np.outer(a, a.conj())


def device_channel(cfg: ScenarioConfig, q, k: int) -> np.ndarray:
    a = steering_vector(q, cfg.device_pos[k], cfg.altitude, cfg.num_antennas)
    d = distance(q, cfg.device_pos[k], cfg.altitude)
    return np.sqrt(cfg.ref_gain / d ** 2) * a


def sensing_beam(cfg: ScenarioConfig, q, p_uav: float) -> np.ndarray:
    a = steering_vector(q, cfg.target_pos, cfg.altitude, cfg.num_antennas)
    return np.sqrt(p_uav / cfg.num_antennas) * a


def exact_comm_sinr(cfg: ScenarioConfig, q, p_uav: float, k: int) -> float:
    """Uplink SINR of device ``k`` under echo + self-interference (single point)."""
    x = sensing_beam(cfg, q, p_uav)
    interf = (radar_channel(cfg, q) + si_matrix(cfg)) @ x
    d = distance(q, cfg.device_pos[k], cfg.altitude)
    sig = cfg.ref_gain * cfg.device_power[k] * cfg.num_antennas / d ** 2
    return float(sig / (np.vdot(interf, interf).real + cfg.num_antennas * cfg.noise_power))


def exact_radar_sinr(cfg: ScenarioConfig, q, p_uav: float, k: int | None = None) -> float:
    """Echo SINR; ``k`` names the device transmitting in the slot, if any."""
    x = sensing_beam(cfg, q, p_uav)
    echo = radar_channel(cfg, q) @ x
    leak = si_matrix(cfg) @ x
    interf = 0.0
    if k is not None:
        d = distance(q, cfg.device_pos[k], cfg.altitude)
        interf = cfg.ref_gain * cfg.device_power[k] / d ** 2
    den = interf + np.vdot(leak, leak).real + cfg.num_antennas * cfg.noise_power
    return float(np.vdot(echo, echo).real / den)


def exact_sinr_batch(cfg: ScenarioConfig, q, k, p_uav, active=True, accel: bool | None = None):
    """Vectorized (comm, radar) exact SINRs for draws of position, device and power.

    ``active`` selects whether the device's uplink counts as radar interference.
    """
    q = np.atleast_2d(np.asarray(q, dtype=float))
    k = np.broadcast_to(np.asarray(k, dtype=int), (q.shape[0],))
    return _kernels.exact_sinr_batch(
        q, cfg.target_pos, cfg.device_pos[k], cfg.altitude, cfg.num_antennas, cfg.ref_gain,
        cfg.rcs, cfg.device_power[k], si_matrix(cfg), cfg.noise_power, p_uav,
        np.asarray(active, dtype=float), accel=accel)


def exact_rate(cfg: ScenarioConfig, q, p_uav, k) -> np.ndarray:
    comm, _ = exact_sinr_batch(cfg, q, k, p_uav)
    return cfg.bandwidth * np.log2(1.0 + comm)
