"""Regenerate the grid-oracle fixtures in tests/fixtures.

Usage: python tests/make_fixtures.py
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

HERE = Path(__file__).parent
sys.path.insert(0, str(HERE))

from conftest import toy_scenario  # noqa: E402
from uavisl.convexify.builders import build_p3, build_p5, build_p7, p3_decision  # noqa: E402
from uavisl.driver import initialize  # noqa: E402
from uavisl.oracle import GridSpec, grid_minimize, write_fixture  # noqa: E402
from uavisl.scenario import scenario_to_dict  # noqa: E402
from uavisl.solver import solve  # noqa: E402

CASES = {
    # name: (scenario overrides, block)
    "p3_corner": (dict(K=2, N=1, M=2, historical=(1000.0, 50.0)), "p3"),
    "p3_interior": (dict(K=2, N=1, M=2, historical=(1000.0, 50.0), device_samples=[1.0, 2800.0]), "p3"),
    "p7": (dict(K=2, N=1, M=2, historical=(1000.0, 50.0)), "p7"),
    "p5": (dict(K=2, N=2, M=2, historical=(1000.0, 50.0)), "p5"),
}


def case_problem(name: str):
    """Scenario, expansion point and built subproblem of a fixture case."""
    over, block = CASES[name]
    cfg = toy_scenario(**over)
    d = initialize(cfg).decision()
    if block == "p3":
        return cfg, d, build_p3(cfg, d.Q, d.p)
    pr = build_p3(cfg, d.Q, d.p)
    d = p3_decision(pr, solve(pr).x, d)
    if block == "p7":
        return cfg, d, build_p7(cfg, d.beta, d.Q, d.p)
    return cfg, d, build_p5(cfg, d.beta, d.p, d.Q)


def case_grid(cfg, problem, block: str) -> GridSpec:
    if block == "p3":
        return GridSpec(tuple([(0.0, 1.0)] * (problem.n - 1)), tuple([0.01] * (problem.n - 1)))
    if block == "p7":
        return GridSpec(((0.0, cfg.uav_power_cap),), (1e-4,))
    r = cfg.v_max * cfg.slot_len
    return GridSpec(((-r, r), (-r, r)), (0.5, 0.5))


def main() -> None:
    for name, (over, block) in CASES.items():
        cfg, d, pr = case_problem(name)
        grid = case_grid(cfg, pr, block)
        x, phi = grid_minimize(pr, grid)
        write_fixture(HERE / "fixtures" / f"oracle_{name}.json", name, grid,
                      {"block": block, "overrides": {k: list(v) if isinstance(v, tuple) else v
                                                     for k, v in over.items()},
                       "scenario": scenario_to_dict(cfg), "expansion": {"beta": d.beta, "Q": d.Q, "p": d.p}},
                      {"x": np.asarray(x), "phi": phi})
        print(f"{name}: grid phi {phi:.10g} at {np.round(x, 6)}")


if __name__ == "__main__":
    main()
