import numpy as np
import pytest

from uavisl import _kernels, bounds
from uavisl.convexify.builders import (build_p3, build_p5, build_p7, nominal_sizes, p3_decision, p5_decision,
                                       p7_decision, power_floor, rate_power_tangent)
from uavisl.driver import initialize
from uavisl.solver import solve
from conftest import toy_scenario


@pytest.fixture(scope="module")
def expansion(reference):
    d = initialize(reference).decision()
    pr = build_p3(reference, d.Q, d.p)
    return p3_decision(pr, solve(pr).x, d)


def test_nominal_sizes_formula():
    assert nominal_sizes(5, 40, 2) == {"p3": 648, "p5": 728, "p7": 288}
    assert nominal_sizes(1, 1, 1) == {"p3": 7, "p5": 9, "p7": 6}


def test_p3_solution_is_feasible_and_improves(reference, expansion):
    d0 = initialize(reference).decision()
    assert bounds.audit(reference, expansion).feasible
    assert bounds.eta(reference, expansion) <= bounds.eta(reference, d0) + 1e-12


def test_p5_and_p7_steps_keep_feasibility(reference, expansion):
    pr5 = build_p5(reference, expansion.beta, expansion.p, expansion.Q)
    out = solve(pr5)
    assert out.optimal
    d5 = p5_decision(pr5, out.x, expansion)
    assert bounds.audit(reference, d5).feasible
    assert bounds.eta(reference, d5) <= bounds.eta(reference, expansion) + 1e-9
    pr7 = build_p7(reference, d5.beta, d5.Q, d5.p)
    out = solve(pr7)
    assert out.optimal
    d7 = p7_decision(pr7, out.x, d5)
    assert bounds.audit(reference, d7).feasible
    assert bounds.eta(reference, d7) <= bounds.eta(reference, d5) + 1e-9


def test_p5_endpoints_pinned(reference, expansion):
    pr5 = build_p5(reference, expansion.beta, expansion.p, expansion.Q)
    d5 = p5_decision(pr5, solve(pr5).x, expansion)
    assert np.array_equal(d5.Q[0], reference.depot_pos) and np.array_equal(d5.Q[-1], reference.depot_pos)


def test_power_floor_meets_threshold(reference, expansion):
    pf = power_floor(reference, expansion.beta, expansion.Q)
    dec = expansion.copy(p=pf * (1 + 1e-9))
    assert bounds.audit(reference, dec).violations["radar"] <= 1e-9


def test_power_tangent_is_under_estimator(reference, expansion, rng):
    from uavisl.convexify.surrogates import surrogate_coefficients

    co = surrogate_coefficients(reference, expansion.Q, expansion.p)
    v0, s = rate_power_tangent(co.zeta[0, 0], co.kappa[0, 0], reference.noise_power, reference.bandwidth, expansion.p[0])
    for p in np.linspace(0, reference.uav_power_cap, 50):
        true = bounds.rate_lb(reference, expansion.Q[1], p, 0)
        assert v0 + s * (p - expansion.p[0]) <= true * (1 + 1e-12)


def test_throughput_objective_builds(reference, expansion):
    for pr in (build_p3(reference, expansion.Q, expansion.p, objective="throughput"),
               build_p5(reference, expansion.beta, expansion.p, expansion.Q, objective="throughput"),
               build_p7(reference, expansion.beta, expansion.Q, expansion.p, objective="throughput")):
        assert solve(pr).optimal


def test_unknown_objective(reference, expansion):
    with pytest.raises(ValueError):
        build_p3(reference, expansion.Q, expansion.p, objective="accuracy")


def test_p5_kernels_numba_matches_numpy(reference, expansion, rng):
    pr5 = build_p5(reference, expansion.beta, expansion.p, expansion.Q)
    k = pr5.meta["kernels"]
    dq = rng.uniform(-5, 5, k.q0.shape)
    e, u = k.aux(dq)
    args = (k.q0 + dq, e, u, k.lpos, k.tpos, k.H2, k.D0l, k.D0t, k.p, k.phi, k.rho, k.nu, k.lk, k.lt, k.lsi,
            k.s2, k.gth)
    a = _kernels.p5_pair_terms(*args, accel=False)
    b = _kernels.p5_pair_terms(*args, accel=True)
    for x, y in zip(a, b):
        assert np.allclose(x, y, rtol=1e-11, atol=0, equal_nan=True)


def test_toy_sizes_follow_formula():
    cfg = toy_scenario(K=2, N=2, M=2)
    d = initialize(cfg).decision()
    want = nominal_sizes(2, 2, 2)
    assert build_p3(cfg, d.Q, d.p).nominal_size == want["p3"]
    assert build_p5(cfg, d.beta, d.p, d.Q).nominal_size == want["p5"]
    assert build_p7(cfg, d.beta, d.Q, d.p).nominal_size == want["p7"]
