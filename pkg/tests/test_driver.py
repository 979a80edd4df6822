import json

import numpy as np
import pytest

from uavisl import bounds
from uavisl.driver import (BLOCK_FAILURE, CONVERGED, BCDSettings, InitialPoint, InitializationError, initialize,
                           max_initializable_threshold, rectify, run_algorithm, run_bcd, run_constp, run_tmax)
from uavisl.oracle import exhaustive_toy_bcd_check, toy_grid
from uavisl.solver import SolverSettings
from conftest import toy_scenario


@pytest.fixture(scope="module")
def toy():
    return toy_scenario(K=2, N=2, M=2, historical=(1000.0, 50.0))


@pytest.fixture(scope="module")
def toy_run(toy):
    return run_bcd(toy)


def test_initialize_unreachable_threshold(reference):
    with pytest.raises(InitializationError) as exc:
        initialize(reference.with_updates(sensing_threshold=1e12))
    assert exc.value.constraint == "radar"


def test_largest_threshold(reference):
    g = max_initializable_threshold(reference, rel_tol=1e-6)
    assert g == pytest.approx(1.34251e-3, rel=1e-5)
    initialize(reference.with_updates(sensing_threshold=g))


def test_initial_point_interior(reference):
    d = initialize(reference).decision()
    assert np.all(d.beta[:, 1:] > 0)
    assert np.all(d.beta.sum(axis=0) < 1)
    assert np.all(bounds.data_volume(reference, d) <= 0.5 * reference.device_cap_bits + 1e-6)


def test_rectify_identity_when_under_cap(reference):
    d = initialize(reference).decision()
    assert np.array_equal(rectify(reference, d).beta, d.beta)


def test_rectify_scales_to_cap(toy):
    d = initialize(toy).decision()
    vol = bounds.data_volume(toy, d, use_exact=True)
    cfg = toy.with_updates(device_samples=np.array([vol[0] / 2, 1e6]) / toy.sample_bits[toy.device_group])
    r = rectify(cfg, d)
    assert np.allclose(r.beta[0], d.beta[0] / 2, rtol=1e-12)
    assert np.array_equal(r.beta[1], d.beta[1])
    assert np.array_equal(rectify(cfg, r).beta, r.beta) or np.allclose(rectify(cfg, r).beta, r.beta, rtol=1e-14)
    assert bounds.audit(cfg, r, use_exact=True).violations["data_availability"] <= 1e-12


def test_toy_run_descends(toy_run):
    assert toy_run.termination == CONVERGED
    assert np.all(np.diff(toy_run.eta_trace) <= 1e-9)
    assert toy_run.p1_audit.feasible and toy_run.p2_audit.feasible
    assert all(r.audit_feasible for r in toy_run.records if r.accepted)


def test_rerun_from_result_is_fixed_point(toy, toy_run):
    f = toy_run.final
    again = run_bcd(toy, InitialPoint(Q=f.Q, p=f.p, beta=f.beta))
    assert again.eta_final <= toy_run.eta_final + 1e-9
    assert again.eta_final >= toy_run.eta_final - 1e-3


def test_report_serializes(toy_run):
    doc = json.loads(json.dumps(toy_run.to_dict(), default=float))
    assert doc["eta_final"] == pytest.approx(toy_run.eta_final)
    assert doc["sensing_threshold"] == toy_run.cfg.sensing_threshold
    assert len(toy_run.block_times()) == toy_run.iterations + 1 and toy_run.block_times()[0] == {}


def test_baselines_on_toy(toy, toy_run):
    c = run_constp(toy)
    assert np.all(c.final.p == toy.uav_power_cap)
    assert not any(r.block == "p7" for r in c.records)
    t = run_tmax(toy)
    assert t.p2_audit.feasible and t.objective == "throughput"
    assert toy_run.eta_final <= c.eta_final + 1e-6


def test_run_algorithm_dispatch(toy):
    with pytest.raises(ValueError):
        run_algorithm("greedy", toy)


def test_block_failure_ends_run(toy):
    rep = run_bcd(toy, settings=BCDSettings(solver=SolverSettings(max_iter=1)))
    assert rep.termination == BLOCK_FAILURE
    assert rep.failure
    assert rep.p2_audit.feasible  # the last accepted point is kept


def test_single_device_toy_matches_grid():
    cfg = toy_scenario(K=1, N=1, M=1)
    rep = exhaustive_toy_bcd_check(cfg, toy_grid(cfg, beta_res=0.01, p_res=1e-4))
    assert rep.consistent and rep.bcd_feasible
    assert rep.within_slack and not rep.flagged


def test_two_slot_toy_against_grid():
    cfg = toy_scenario(K=1, N=2, M=1, historical=(500.0,))
    rep = exhaustive_toy_bcd_check(cfg, toy_grid(cfg, beta_res=0.05, p_res=0.004, q_res=10.0))
    assert rep.bcd_feasible and rep.within_slack
