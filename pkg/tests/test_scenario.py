from pathlib import Path

import numpy as np
import pytest
import yaml
from hypothesis import given, settings, strategies as st

from uavisl.scenario import (DEFAULT_THRESHOLD, ConfigParseError, ConfigValidationError, ScenarioError,
                             db_to_linear, dbm_to_watts, derive_constants, dump_scenario, fit_error_surrogate,
                             load_scenario, reference_scenario, parse_length, save_scenario, scenario_from_dict,
                             scenario_to_dict)

ROOT = Path(__file__).parent.parent


def reference_dict():
    return yaml.safe_load((ROOT / "scenarios" / "reference.yaml").read_text())


def test_yaml_matches_builtin(reference):
    assert load_scenario(ROOT / "scenarios" / "reference.yaml") == reference


def test_reference_dimensions(reference):
    assert (reference.num_devices, reference.num_slots, reference.num_models) == (5, 40, 2)
    assert reference.slot_len == 1.0
    assert reference.sensing_threshold == DEFAULT_THRESHOLD
    assert list(reference.device_group) == [0, 0, 1, 1, 1]
    assert reference.device_cap_bits[0] == 1500 * 24584


def test_dump_round_trip(tmp_path, reference):
    save_scenario(reference, tmp_path / "s.yaml")
    assert load_scenario(tmp_path / "s.yaml") == reference
    assert scenario_from_dict(yaml.safe_load(dump_scenario(reference))) == reference
    assert scenario_from_dict(scenario_to_dict(reference)) == reference


def test_units():
    assert db_to_linear(-50) == pytest.approx(1e-5)
    assert dbm_to_watts(30) == pytest.approx(1.0)
    assert parse_length("1.7 km", "k") == pytest.approx(1700.0)
    assert parse_length("40 m", "k") == 40.0
    assert parse_length(12, "k") == 12.0
    with pytest.raises(ConfigParseError):
        parse_length("far", "k")
    with pytest.raises(ConfigParseError):
        parse_length(True, "k")


def test_derived_constants(reference):
    dc = derive_constants(reference)
    assert dc.lam_si == pytest.approx(reference.si_coeff * 8)
    assert dc.lam_t == pytest.approx(reference.ref_gain * reference.rcs * 8)
    assert np.allclose(dc.lam_k, reference.ref_gain * reference.device_power)


def test_numeric_strings_accepted():
    d = reference_dict()
    d["radio"]["bandwidth"] = "2e5"
    assert scenario_from_dict(d).bandwidth == 2e5


@pytest.mark.parametrize("mutate, key", [
    (lambda d: d["radio"].update(bogus=1), "radio.bogus"),
    (lambda d: d.pop("learning"), "learning"),
    (lambda d: d["timing"].update(slot_length=0.7), "timing.slot_length"),
    (lambda d: d["learning"].update(groups=[[1, 2], [2, 3, 4, 5]]), "groups"),
    (lambda d: d["learning"].update(groups=[[1, 2], [3, 9]]), "learning.groups"),
    (lambda d: d["radio"].update(uav_power_cap=-1), "uav_power_cap"),
    (lambda d: d["learning"].update(sample_bits=[1.0]), "sample_bits"),
    (lambda d: d["radio"].update(num_antennas=2.5), "radio.num_antennas"),
    (lambda d: d["radio"].update(noise_power=1e-11), "radio.noise_power"),
])
def test_malformed_config_names_key(mutate, key):
    d = reference_dict()
    mutate(d)
    with pytest.raises(ScenarioError, match=key.replace(".", r"\.")):
        scenario_from_dict(d)


def test_malformed_yaml(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("timing: [unclosed\n")
    with pytest.raises(ConfigParseError):
        load_scenario(p)


def test_validation_error_type(reference):
    with pytest.raises(ConfigValidationError):
        reference.with_updates(groups=((0, 1),))


def test_with_period_keeps_slot_length(reference):
    c = reference.with_period(70.0)
    assert c.num_slots == 70 and c.slot_len == 1.0


@given(st.floats(0.05, 50.0), st.floats(0.01, 1.5))
@settings(max_examples=50, deadline=None)
def test_fit_recovers_power_law(a, b):
    counts = np.array([50.0, 200.0, 800.0, 3200.0, 12800.0])
    err = a * counts ** (-b)
    if np.any(err >= 1) or np.any(err <= 0):
        return
    fa, fb = fit_error_surrogate(list(zip(counts, err)))
    assert fa == pytest.approx(a, rel=1e-8)
    assert fb == pytest.approx(b, rel=1e-8)


def test_fit_clamps_rising_error():
    a, b = fit_error_surrogate([(10, 0.1), (100, 0.2)])
    assert b == 0.0 and a == pytest.approx(np.sqrt(0.02))


@pytest.mark.parametrize("pairs", [[(10, 0.1)], [(10, 0.1), (10, 0.2)], [(0, 0.1), (10, 0.2)], [(10, 1.2), (20, 0.3)]])
def test_fit_rejects_degenerate(pairs):
    with pytest.raises(ValueError):
        fit_error_surrogate(pairs)
