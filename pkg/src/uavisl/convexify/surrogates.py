"""Scalar bounding devices used to convexify the three blocks.

* quadratic transform: ``f/g >= 2 a sqrt(f) - a^2 g`` (tight at ``a = sqrt(f)/g``)
* inverse quadratic transform: ``ln(1 + f/g) <= (1-th)/(2 r sqrt(g) - r^2 f) - h(th)``
* first-order Taylor under-estimators of ``d^-2``, ``d^2`` and ``d^-4``
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..scenario import ScenarioConfig, derive_constants


def quad_transform_lb(f, g, alpha):
    f, g, alpha = np.asarray(f, float), np.asarray(g, float), np.asarray(alpha, float)
    return 2.0 * alpha * np.sqrt(f) - alpha ** 2 * g


def quad_transform_alpha(f, g):
    return np.sqrt(f) / g


def h_theta(theta):
    return theta + np.log1p(-np.asarray(theta, float))


def inv_quad_transform_ub(f, g, theta, rho):
    """Upper bound of ``ln(1 + f/g)``; raises if the denominator guard fails."""
    f, g = np.asarray(f, float), np.asarray(g, float)
    theta, rho = np.asarray(theta, float), np.asarray(rho, float)
    den = 2.0 * rho * np.sqrt(g) - rho ** 2 * f
    if np.any(den <= 0):
        raise ValueError("inverse quadratic transform guard violated: 2 rho sqrt(g) - rho^2 f <= 0")
    return (1.0 - theta) / den - h_theta(theta)


def inv_quad_transform_params(f, g):
    f, g = np.asarray(f, float), np.asarray(g, float)
    return f / (f + g), np.sqrt(g) / f


def _d2(q, g, H):
    q = np.asarray(q, float)
    return H ** 2 + ((q - np.asarray(g, float)) ** 2).sum(axis=-1)


def taylor_inv_sq_lb(q, g, H, q_prev):
    """Concave under-estimator of d^-2(q, g), exact at ``q_prev``."""
    d0 = _d2(q_prev, g, H)
    return 2.0 / d0 - _d2(q, g, H) / d0 ** 2


def taylor_sq_lb(q, g, H, q_prev):
    """Affine under-estimator of d^2(q, g), exact at ``q_prev``."""
    q, q_prev, g = np.asarray(q, float), np.asarray(q_prev, float), np.asarray(g, float)
    return 2.0 * ((q_prev - g) * (q - q_prev)).sum(axis=-1) + _d2(q_prev, g, H)


def taylor_inv_quart_lb(q, t, H, q_prev):
    """Concave under-estimator of d^-4(q, t), exact at ``q_prev``."""
    d0 = _d2(q_prev, t, H)
    return 3.0 / d0 ** 2 - 2.0 * _d2(q, t, H) / d0 ** 3


@dataclass(frozen=True)
class SurrogateCoefficients:
    """Expansion-point multipliers, every array shaped (K, N) over slots 1..N.

    ``varphi``/``varphi_idle`` - sensing quadratic-transform multipliers with
    and without the device's uplink interference; ``rho`` - rate
    quadratic-transform multiplier; ``mu``/``nu`` - inverse-transform
    multipliers; ``zeta``/``kappa`` - power-block coefficients.
    """

    varphi: np.ndarray
    varphi_idle: np.ndarray
    rho: np.ndarray
    mu: np.ndarray
    nu: np.ndarray
    zeta: np.ndarray
    kappa: np.ndarray


def surrogate_coefficients(cfg: ScenarioConfig, Q, p) -> SurrogateCoefficients:
    dc = derive_constants(cfg)
    Q = np.asarray(Q, float)[1:]
    p = np.asarray(p, float)
    H = cfg.altitude
    dt2 = _d2(Q, cfg.target_pos, H)                               # (N,)
    dk2 = _d2(Q[None, :, :], cfg.device_pos[:, None, :], H)      # (K, N)
    lam_k = dc.lam_k[:, None]
    s2 = cfg.noise_power
    l0 = np.sqrt(dc.lam_t * p) / dt2
    z_act = lam_k / dk2 + dc.lam_si * p + s2
    z_idle = np.broadcast_to(dc.lam_si * p + s2, dk2.shape)
    r0 = lam_k / dk2
    zeta = (np.sqrt(dc.lam_t) / dt2 + np.sqrt(dc.lam_si)) ** 2
    psi0 = np.broadcast_to(zeta * p + s2, dk2.shape)
    return SurrogateCoefficients(
        varphi=l0 / z_act,
        varphi_idle=l0 / z_idle,
        rho=np.sqrt(r0) / psi0,
        mu=r0 / (r0 + psi0),
        nu=np.sqrt(psi0) / r0,
        zeta=np.broadcast_to(zeta, dk2.shape).copy(),
        kappa=r0,
    )
