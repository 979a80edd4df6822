"""Scenario constants: loading, validation, derived gains and error-curve fitting.

Config files are YAML.  Every physical quantity is stored in linear SI units
internally; dB-valued keys (``*_db`` / ``*_dbm``) are converted on load.
Positions may be given as plain numbers (meters) or strings with a unit
suffix (``"1.7 km"``, ``"1700 m"``).

Schema (all sections required unless noted)::

    timing:
      period: 40            # T, seconds
      num_slots: 40         # N (or slot_length: 1)
    geometry:
      altitude: 40          # H, meters
      v_max: 60             # m/s
      depot: [1.7 km, 2.9 km]
      target: [1.9 km, 2.8 km]
      devices: [[2.2 km, 3.1 km], ...]
    radio:
      bandwidth: 2.0e5      # Hz
      noise_power_dbm: -79  # total receive noise power per antenna
                            # (alternatively noise_psd_dbm_per_hz, scaled by bandwidth,
                            #  or noise_power in Watts)
      ref_gain_db: -50      # or ref_gain (linear)
      rcs: 20               # m^2
      si_coeff_db: -110     # or si_coeff (linear)
      wavelength: 0.09      # m
      num_antennas: 8
      device_power: 0.01    # W, scalar or one per device
      uav_power_cap: 0.04   # W
      sensing_threshold: 1.0e-3   # linear (or sensing_threshold_db)
    learning:
      groups: [[1, 2], [3, 4, 5]]  # 1-based device indices
      sample_bits: [24584, 6276]
      device_samples: [1500, 2800, 800, 800, 800]
      historical_samples: [5120, 800]
      error_coeff: [25.03, 0.82]
      error_exp: [0.55, 0.22]
    optimization:           # optional
      bcd_tol: 1.0e-3
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml


class ScenarioError(ValueError):
    """Raised for malformed or invalid scenario files."""


class ConfigParseError(ScenarioError):
    pass


class ConfigValidationError(ScenarioError):
    pass


def db_to_linear(value_db: float) -> float:
    return 10.0 ** (value_db / 10.0)


def dbm_to_watts(value_dbm: float) -> float:
    return 10.0 ** ((value_dbm - 30.0) / 10.0)


def _frozen(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    num_slots: int
    period: float
    altitude: float
    v_max: float
    bandwidth: float
    noise_power: float
    ref_gain: float
    rcs: float
    si_coeff: float
    wavelength: float
    num_antennas: int
    device_pos: np.ndarray
    target_pos: np.ndarray
    depot_pos: np.ndarray
    device_power: np.ndarray
    uav_power_cap: float
    sensing_threshold: float
    groups: tuple[tuple[int, ...], ...]
    sample_bits: np.ndarray
    device_samples: np.ndarray
    historical_samples: np.ndarray
    error_coeff: np.ndarray
    error_exp: np.ndarray
    bcd_tol: float = 1e-3
    name: str = field(default="scenario", compare=False)

    def __post_init__(self):
        for name in ("device_pos", "target_pos", "depot_pos", "device_power", "sample_bits",
                     "device_samples", "historical_samples", "error_coeff", "error_exp"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        object.__setattr__(self, "groups", tuple(tuple(int(k) for k in g) for g in self.groups))
        object.__setattr__(self, "num_slots", int(self.num_slots))
        object.__setattr__(self, "num_antennas", int(self.num_antennas))
        validate(self)

    @property
    def num_devices(self) -> int:
        return self.device_pos.shape[0]

    @property
    def num_models(self) -> int:
        return len(self.groups)

    @property
    def slot_len(self) -> float:
        return self.period / self.num_slots

    @property
    def device_group(self) -> np.ndarray:
        """Model index of every device (0-based)."""
        out = np.empty(self.num_devices, dtype=int)
        for m, g in enumerate(self.groups):
            out[list(g)] = m
        return out

    @property
    def device_cap_bits(self) -> np.ndarray:
        """Data availability cap I_k * D_m per device, in bits."""
        return self.device_samples * self.sample_bits[self.device_group]

    def with_updates(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)

    def with_period(self, period: float) -> "ScenarioConfig":
        """Same slot length, different flight period."""
        n = int(round(period / self.slot_len))
        return replace(self, period=float(period), num_slots=n)

    def __eq__(self, other):
        if not isinstance(other, ScenarioConfig):
            return NotImplemented
        for f in fields(self):
            if not f.compare:
                continue
            a, b = getattr(self, f.name), getattr(other, f.name)
            if isinstance(a, np.ndarray):
                if a.shape != b.shape or not np.array_equal(a, b):
                    return False
            elif a != b:
                return False
        return True

    __hash__ = None


@dataclass(frozen=True)
class DerivedConstants:
    lam_si: float
    lam_t: float
    lam_k: np.ndarray


def derive_constants(cfg: ScenarioConfig) -> DerivedConstants:
    return DerivedConstants(
        lam_si=cfg.si_coeff * cfg.num_antennas,
        lam_t=cfg.ref_gain * cfg.rcs * cfg.num_antennas,
        lam_k=_frozen(cfg.ref_gain * cfg.device_power),
    )


def validate(cfg: ScenarioConfig) -> None:
    def fail(msg):
        raise ConfigValidationError(msg)

    K = cfg.device_pos.shape[0]
    if cfg.device_pos.ndim != 2 or cfg.device_pos.shape[1] != 2 or K < 1:
        fail("devices: expected a nonempty list of 2-D positions")
    for key in ("target_pos", "depot_pos"):
        if getattr(cfg, key).shape != (2,):
            fail(f"{key}: expected a 2-D position")
    if cfg.num_slots < 1:
        fail("num_slots must be a positive integer")
    if cfg.num_antennas < 1:
        fail("num_antennas must be a positive integer")
    if not math.isclose(cfg.slot_len * cfg.num_slots, cfg.period, rel_tol=1e-12):
        fail("slot_length * num_slots must equal period")
    for key in ("period", "altitude", "v_max", "bandwidth", "noise_power", "ref_gain", "rcs",
                "si_coeff", "wavelength", "uav_power_cap", "sensing_threshold", "bcd_tol"):
        v = getattr(cfg, key)
        if not (np.isfinite(v) and v > 0):
            fail(f"{key} must be strictly positive (got {v})")
    if cfg.device_power.shape != (K,) or np.any(cfg.device_power <= 0):
        fail("device_power must be strictly positive for every device")
    M = len(cfg.groups)
    if M < 1:
        fail("groups: at least one model group is required")
    seen: list[int] = []
    for m, g in enumerate(cfg.groups):
        if not g:
            fail(f"groups: group {m + 1} is empty")
        seen.extend(g)
    if len(seen) != len(set(seen)):
        fail("groups: groups overlap (each device must belong to exactly one group)")
    if sorted(seen) != list(range(K)):
        fail("groups: groups must partition the device set")
    for key in ("sample_bits", "historical_samples", "error_coeff", "error_exp"):
        if getattr(cfg, key).shape != (M,):
            fail(f"{key}: expected one value per model group ({M})")
    if cfg.device_samples.shape != (K,):
        fail(f"device_samples: expected one value per device ({K})")
    if np.any(cfg.sample_bits <= 0):
        fail("sample_bits must be positive")
    for key in ("device_samples", "historical_samples", "error_coeff", "error_exp"):
        if np.any(getattr(cfg, key) < 0):
            fail(f"{key} must be nonnegative")


# --- file I/O -------------------------------------------------------------------

_LEN_RE = re.compile(r"^\s*([-+0-9.eE]+)\s*(km|m)?\s*$")


def parse_length(value: Any, key: str) -> float:
    if isinstance(value, bool):
        raise ConfigParseError(f"{key}: expected a length, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        m = _LEN_RE.match(value)
        if m:
            scale = 1000.0 if m.group(2) == "km" else 1.0
            return float(m.group(1)) * scale
    raise ConfigParseError(f"{key}: cannot parse length {value!r}")


def _point(value: Any, key: str) -> list[float]:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigParseError(f"{key}: expected a 2-element position")
    return [parse_length(v, key) for v in value]


def _as_float(v: Any) -> float | None:
    # YAML 1.1 loads exponent forms such as 2.0e5 as strings
    if isinstance(v, bool):
        return None
    if isinstance(v, (int, float)):
        return float(v)
    if isinstance(v, str):
        try:
            return float(v)
        except ValueError:
            return None
    return None


def _num(section: dict, key: str, where: str) -> float:
    if key not in section:
        raise ConfigParseError(f"{where}.{key}: missing required key")
    v = _as_float(section[key])
    if v is None:
        raise ConfigParseError(f"{where}.{key}: expected a number, got {section[key]!r}")
    return v


def _numlist(section: dict, key: str, where: str) -> list[float]:
    if key not in section:
        raise ConfigParseError(f"{where}.{key}: missing required key")
    v = section[key]
    vals = [_as_float(x) for x in v] if isinstance(v, (list, tuple)) else [None]
    if any(x is None for x in vals):
        raise ConfigParseError(f"{where}.{key}: expected a list of numbers")
    return vals


def _linear(section: dict, key: str, where: str, db_key: str, conv) -> float:
    if key in section and db_key in section:
        raise ConfigParseError(f"{where}: give only one of {key} / {db_key}")
    if db_key in section:
        return conv(_num(section, db_key, where))
    return _num(section, key, where)


_KNOWN = {
    "timing": {"period", "num_slots", "slot_length"},
    "geometry": {"altitude", "v_max", "depot", "target", "devices"},
    "radio": {"bandwidth", "noise_power", "noise_power_dbm", "noise_psd_dbm_per_hz",
              "ref_gain", "ref_gain_db", "rcs", "si_coeff", "si_coeff_db", "wavelength",
              "num_antennas", "device_power", "uav_power_cap", "sensing_threshold",
              "sensing_threshold_db"},
    "learning": {"groups", "sample_bits", "device_samples", "historical_samples",
                 "error_coeff", "error_exp"},
    "optimization": {"bcd_tol"},
}


def scenario_from_dict(data: Any, name: str = "scenario") -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigParseError("top level: expected a mapping of sections")
    for sec, value in data.items():
        if sec not in _KNOWN:
            raise ConfigParseError(f"{sec}: unknown section")
        if not isinstance(value, dict):
            raise ConfigParseError(f"{sec}: expected a mapping")
        for key in value:
            if key not in _KNOWN[sec]:
                raise ConfigParseError(f"{sec}.{key}: unknown key")
    for sec in ("timing", "geometry", "radio", "learning"):
        if sec not in data:
            raise ConfigParseError(f"{sec}: missing required section")
    tm, geo, rad, lrn = data["timing"], data["geometry"], data["radio"], data["learning"]
    opt = data.get("optimization", {})

    period = _num(tm, "period", "timing")
    if "num_slots" in tm:
        n_raw = tm["num_slots"]
        if isinstance(n_raw, bool) or not isinstance(n_raw, int):
            raise ConfigParseError("timing.num_slots: expected an integer")
        num_slots = n_raw
    elif "slot_length" in tm:
        ratio = period / _num(tm, "slot_length", "timing")
        num_slots = int(round(ratio))
        if not math.isclose(num_slots, ratio, rel_tol=1e-9):
            raise ConfigValidationError("timing.slot_length must divide period exactly")
    else:
        raise ConfigParseError("timing.num_slots: missing required key (or slot_length)")

    if "devices" not in geo or not isinstance(geo["devices"], list):
        raise ConfigParseError("geometry.devices: expected a list of positions")
    devices = [_point(p, "geometry.devices") for p in geo["devices"]]
    for key in ("depot", "target"):
        if key not in geo:
            raise ConfigParseError(f"geometry.{key}: missing required key")

    bandwidth = _num(rad, "bandwidth", "radio")
    noise_keys = [k for k in ("noise_power", "noise_power_dbm", "noise_psd_dbm_per_hz") if k in rad]
    if len(noise_keys) != 1:
        raise ConfigParseError("radio.noise_power: give exactly one of noise_power, "
                               "noise_power_dbm, noise_psd_dbm_per_hz")
    if noise_keys[0] == "noise_power":
        noise = _num(rad, "noise_power", "radio")
    elif noise_keys[0] == "noise_power_dbm":
        noise = dbm_to_watts(_num(rad, "noise_power_dbm", "radio"))
    else:
        noise = dbm_to_watts(_num(rad, "noise_psd_dbm_per_hz", "radio")) * bandwidth

    K = len(devices)
    if "device_power" not in rad:
        raise ConfigParseError("radio.device_power: missing required key")
    dp = rad["device_power"]
    if not isinstance(dp, (list, tuple)):
        device_power = [_num(rad, "device_power", "radio")] * K
    else:
        device_power = _numlist(rad, "device_power", "radio")

    groups_raw = lrn.get("groups")
    if not isinstance(groups_raw, list) or not all(
            isinstance(g, list) and all(isinstance(k, int) and not isinstance(k, bool) for k in g)
            for g in groups_raw):
        raise ConfigParseError("learning.groups: expected a list of lists of device indices")
    groups = []
    for g in groups_raw:
        if any(k < 1 or k > K for k in g):
            raise ConfigValidationError("learning.groups: device index out of range (1-based)")
        groups.append(tuple(k - 1 for k in g))

    n_ant = rad.get("num_antennas")
    if isinstance(n_ant, bool) or not isinstance(n_ant, int):
        raise ConfigParseError("radio.num_antennas: expected an integer")

    return ScenarioConfig(
        num_slots=num_slots,
        period=period,
        altitude=parse_length(geo.get("altitude"), "geometry.altitude"),
        v_max=_num(geo, "v_max", "geometry"),
        bandwidth=bandwidth,
        noise_power=noise,
        ref_gain=_linear(rad, "ref_gain", "radio", "ref_gain_db", db_to_linear),
        rcs=_num(rad, "rcs", "radio"),
        si_coeff=_linear(rad, "si_coeff", "radio", "si_coeff_db", db_to_linear),
        wavelength=parse_length(rad.get("wavelength"), "radio.wavelength"),
        num_antennas=n_ant,
        device_pos=devices,
        target_pos=_point(geo["target"], "geometry.target"),
        depot_pos=_point(geo["depot"], "geometry.depot"),
        device_power=device_power,
        uav_power_cap=_num(rad, "uav_power_cap", "radio"),
        sensing_threshold=_linear(rad, "sensing_threshold", "radio", "sensing_threshold_db",
                                  db_to_linear),
        groups=tuple(groups),
        sample_bits=_numlist(lrn, "sample_bits", "learning"),
        device_samples=_numlist(lrn, "device_samples", "learning"),
        historical_samples=_numlist(lrn, "historical_samples", "learning"),
        error_coeff=_numlist(lrn, "error_coeff", "learning"),
        error_exp=_numlist(lrn, "error_exp", "learning"),
        bcd_tol=_num(opt, "bcd_tol", "optimization") if "bcd_tol" in opt else 1e-3,
        name=name,
    )


def load_scenario(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigParseError(f"{path}: malformed YAML ({exc})") from exc
    return scenario_from_dict(data, name=path.stem)


def scenario_to_dict(cfg: ScenarioConfig) -> dict:
    """Linear-unit mapping that loads back to an identical config."""
    return {
        "timing": {"period": cfg.period, "num_slots": cfg.num_slots},
        "geometry": {
            "altitude": cfg.altitude,
            "v_max": cfg.v_max,
            "depot": cfg.depot_pos.tolist(),
            "target": cfg.target_pos.tolist(),
            "devices": cfg.device_pos.tolist(),
        },
        "radio": {
            "bandwidth": cfg.bandwidth,
            "noise_power": cfg.noise_power,
            "ref_gain": cfg.ref_gain,
            "rcs": cfg.rcs,
            "si_coeff": cfg.si_coeff,
            "wavelength": cfg.wavelength,
            "num_antennas": cfg.num_antennas,
            "device_power": cfg.device_power.tolist(),
            "uav_power_cap": cfg.uav_power_cap,
            "sensing_threshold": cfg.sensing_threshold,
        },
        "learning": {
            "groups": [[k + 1 for k in g] for g in cfg.groups],
            "sample_bits": cfg.sample_bits.tolist(),
            "device_samples": cfg.device_samples.tolist(),
            "historical_samples": cfg.historical_samples.tolist(),
            "error_coeff": cfg.error_coeff.tolist(),
            "error_exp": cfg.error_exp.tolist(),
        },
        "optimization": {"bcd_tol": cfg.bcd_tol},
    }


def dump_scenario(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(scenario_to_dict(cfg), sort_keys=False)


def save_scenario(cfg: ScenarioConfig, path: str | Path) -> None:
    Path(path).write_text(dump_scenario(cfg))


# Largest threshold (rounded down) at which the depot start admits every device's
# uplink within the power cap; see ``driver.max_initializable_threshold``.
DEFAULT_THRESHOLD = 1.3425e-3


def reference_scenario(period: float = 40.0, sensing_threshold: float = DEFAULT_THRESHOLD) -> ScenarioConfig:
    """The evaluation setup with 5 devices and 2 models, 1 s slots."""
    km = 1000.0
    return ScenarioConfig(
        num_slots=int(round(period)),
        period=float(period),
        altitude=40.0,
        v_max=60.0,
        bandwidth=0.2e6,
        noise_power=dbm_to_watts(-79.0),
        ref_gain=db_to_linear(-50.0),
        rcs=20.0,
        si_coeff=db_to_linear(-110.0),
        wavelength=0.09,
        num_antennas=8,
        device_pos=[[2.2 * km, 3.1 * km], [2.0 * km, 2.9 * km], [2.2 * km, 2.65 * km],
                    [1.8 * km, 3.1 * km], [1.7 * km, 2.6 * km]],
        target_pos=[1.9 * km, 2.8 * km],
        depot_pos=[1.7 * km, 2.9 * km],
        device_power=[0.01] * 5,
        uav_power_cap=0.04,
        sensing_threshold=sensing_threshold,
        groups=((0, 1), (2, 3, 4)),
        sample_bits=[24584.0, 6276.0],
        device_samples=[1500.0, 2800.0, 800.0, 800.0, 800.0],
        historical_samples=[5120.0, 800.0],
        error_coeff=[25.03, 0.82],
        error_exp=[0.55, 0.22],
        bcd_tol=1e-3,
        name="reference",
    )


# --- learning-curve fit -----------------------------------------------------------

def fit_error_surrogate(pairs: Sequence[tuple[float, float]]) -> tuple[float, float]:
    """Least-squares fit of ``error = a * count**(-b)`` in the log domain.

    A nonnegative fitted slope (error not falling with data) is clamped to ``b = 0``,
    in which case ``a`` is the geometric mean of the errors.
    """
    arr = np.asarray(pairs, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 2:
        raise ValueError("need at least two (sample_count, error) pairs")
    counts, errors = arr[:, 0], arr[:, 1]
    if np.any(counts <= 0):
        raise ValueError("sample counts must be positive")
    if np.any((errors <= 0) | (errors >= 1)):
        raise ValueError("errors must lie in (0, 1)")
    x, y = np.log(counts), np.log(errors)
    if np.ptp(x) == 0:
        raise ValueError("degenerate input: all sample counts are equal")
    slope, intercept = np.polyfit(x, y, 1)
    if slope > -1e-12:
        return float(np.exp(y.mean())), 0.0
    return float(np.exp(intercept)), float(-slope)
