import numpy as np
import pytest

from uavisl.scenario import ScenarioConfig, dbm_to_watts, db_to_linear, reference_scenario


def toy_scenario(K=1, N=1, M=1, period=None, threshold=1e-4, v_max=30.0, historical=(200.0, 200.0),
                 devices=None, **over) -> ScenarioConfig:
    """Small scenario around the reference radio constants."""
    devices = devices if devices is not None else [[1900.0, 2950.0], [1650.0, 2700.0]][:K]
    groups = ((0,),) if M == 1 and K == 1 else (((0, 1),) if M == 1 else ((0,), (1,)))
    kw = dict(
        num_slots=N, period=float(period or N), altitude=40.0, v_max=v_max, bandwidth=0.2e6,
        noise_power=dbm_to_watts(-79.0), ref_gain=db_to_linear(-50.0), rcs=20.0,
        si_coeff=db_to_linear(-110.0), wavelength=0.09, num_antennas=8, device_pos=devices,
        target_pos=[1750.0, 2850.0], depot_pos=[1700.0, 2900.0], device_power=[0.01] * K,
        uav_power_cap=0.04, sensing_threshold=threshold, groups=groups,
        sample_bits=[24584.0, 6276.0][:M], device_samples=[1500.0, 2800.0][:K],
        historical_samples=list(historical[:M]), error_coeff=[25.03, 0.82][:M],
        error_exp=[0.55, 0.22][:M], name="toy")
    kw.update(over)
    return ScenarioConfig(**kw)


@pytest.fixture(scope="session")
def reference():
    return reference_scenario()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --- shared reference-scenario runs (expensive, computed once per session) ----------------

_RUNS: dict = {}


def reference_run(algo: str = "proposed", period: float = 40.0, threshold: float | None = None):
    """Cached run of one algorithm on the reference scenario."""
    from uavisl.driver import run_algorithm

    key = (algo, period, threshold)
    if key not in _RUNS:
        cfg = reference_scenario(period=period)
        if threshold is not None:
            cfg = cfg.with_updates(sensing_threshold=threshold)
        _RUNS[key] = run_algorithm(algo, cfg)
    return _RUNS[key]


# criterion lines collected by test_acceptance and echoed at the end of the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
