"""Command-line front end: ``run``, ``sweep`` and ``fit``.

Exit codes: 0 success, 2 usage, 3 bad config, 4 infeasible scenario,
5 run stopped on a block failure (outputs still written), 6 degenerate fit
data, 7 sweep finished with failed entries, 1 anything unexpected.

The log level comes from ``UAVISL_LOG`` (default WARNING).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .bounds import Decision, audit
from .driver import (ALGORITHMS, BLOCK_FAILURE, BLOCKS, BCDSettings, InitialPoint, InitializationError,
                     RunReport, initialize, run_algorithm)
from .scenario import ScenarioConfig, ScenarioError, fit_error_surrogate, load_scenario

log = logging.getLogger("uavisl")

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_INFEASIBLE = 4
EXIT_BLOCK_FAILURE = 5
EXIT_FIT = 6
EXIT_SWEEP_PARTIAL = 7

SWEEPABLE = ("T", "gamma_th", "p_uav")


def _num(v: float) -> str:
    """Shortest round-tripping text for a float."""
    return repr(float(v))


def _write_csv(path: Path, header: list[str], rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_outputs(report: RunReport, out: Path, extra: dict | None = None) -> None:
    """Write the rectified decision, the iteration log and report.json to ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    dec = report.rectified
    N, K = dec.num_slots, dec.beta.shape[0]
    _write_csv(out / "trajectory.csv", ["n", "x_m", "y_m"],
               ([n, _num(dec.Q[n, 0]), _num(dec.Q[n, 1])] for n in range(N + 1)))
    _write_csv(out / "allocation.csv", ["n", "k", "beta"],
               ([n, k + 1, _num(dec.beta[k, n])] for n in range(1, N + 1) for k in range(K)))
    _write_csv(out / "power.csv", ["n", "p_uav_w"], ([n, _num(dec.p[n - 1])] for n in range(1, N + 1)))
    newton = [{b: 0 for b in BLOCKS} for _ in range(report.iterations + 1)]
    for r in report.records:
        newton[r.iteration][r.block] += int(r.solver.get("iterations", 0))
    _write_csv(out / "iterations.csv",
               ["i", "eta", "objective"] + [f"{b}_newton_steps" for b in BLOCKS],
               ([i, _num(report.eta_trace[i]), _num(report.objective_trace[i])] + [newton[i][b] for b in BLOCKS]
                for i in range(len(report.eta_trace))))
    doc = report.to_dict()
    doc["block_seconds"] = report.block_times()
    doc["decision_rectified"] = {"Q_m": dec.Q.tolist(), "beta": dec.beta.tolist(), "p_w": dec.p.tolist()}
    doc["version"] = __version__
    if extra:
        doc.update(extra)
    (out / "report.json").write_text(json.dumps(doc, indent=2, sort_keys=True, default=float) + "\n")


def read_decision(out: Path, K: int) -> Decision:
    """Rebuild the rectified decision from the CSV files of a run directory."""
    def rows(name):
        with (out / name).open() as fh:
            r = csv.reader(fh)
            next(r)
            return [list(map(float, row)) for row in r]

    traj = np.array(rows("trajectory.csv"))
    N = traj.shape[0] - 1
    beta = np.zeros((K, N + 1))
    for n, k, b in rows("allocation.csv"):
        beta[int(k) - 1, int(n)] = b
    p = np.array(rows("power.csv"))[:, 1]
    return Decision(beta, traj[:, 1:], p)


def perturbed_start(cfg: ScenarioConfig, init: InitialPoint, rng: np.random.Generator) -> InitialPoint:
    """Shrink each initial time share by a random factor in [0.5, 1]; stays feasible."""
    beta = init.beta * rng.uniform(0.5, 1.0, size=init.beta.shape)
    return InitialPoint(Q=init.Q.copy(), p=init.p.copy(), beta=beta)


def execute(cfg: ScenarioConfig, algo: str, max_iters: int | None = None, seed: int | None = None,
            starts: int = 1) -> tuple[RunReport, dict]:
    """One run, or the best of ``starts`` perturbed starts when a seed is given."""
    settings = None
    if algo == "tmax":
        settings = BCDSettings(relative_tol=True, **({"max_iters": max_iters} if max_iters else {}))
    elif max_iters:
        settings = BCDSettings(max_iters=max_iters)
    init = initialize(cfg)
    best = run_algorithm(algo, cfg, init, settings)
    info = {"seed": seed, "starts": starts, "start_etas": [best.eta_final]}
    if seed is not None and starts > 1:
        rng = np.random.default_rng(seed)
        for _ in range(starts - 1):
            rep = run_algorithm(algo, cfg, perturbed_start(cfg, init, rng), settings)
            info["start_etas"].append(rep.eta_final)
            if rep.eta_final < best.eta_final:
                best = rep
    return best, info


def cmd_run(args) -> int:
    cfg = load_scenario(args.config)
    rep, info = execute(cfg, args.algo, args.max_iters, args.seed, args.starts)
    write_outputs(rep, Path(args.out), {"multi_start": info, "config": str(args.config)})
    print(f"{args.algo}: eta {rep.eta_final:.6g} after {rep.iterations} iterations ({rep.termination}); "
          f"P1 audit {'passed' if rep.p1_audit.feasible else 'FAILED'}")
    return EXIT_BLOCK_FAILURE if rep.termination == BLOCK_FAILURE else EXIT_OK


def apply_sweep_value(cfg: ScenarioConfig, param: str, value: float) -> ScenarioConfig:
    if param == "T":
        return cfg.with_period(value)
    if param == "gamma_th":
        return cfg.with_updates(sensing_threshold=value)
    if param == "p_uav":
        return cfg.with_updates(uav_power_cap=value)
    raise ValueError(f"unknown sweep parameter {param!r}; expected one of {SWEEPABLE}")


def _sweep_one(job):
    cfg, param, value, algo, max_iters, out = job
    try:
        c = apply_sweep_value(cfg, param, value)
        rep, info = execute(c, algo, max_iters)
        write_outputs(rep, out, {"sweep": {"param": param, "value": value}})
        slack = -rep.p2_audit.violations["radar"] * c.sensing_threshold
        return {"value": value, "status": rep.termination, "eta_final": rep.eta_final,
                "min_radar_slack": slack, "iterations": rep.iterations, "wall_time": rep.wall_time}
    except (InitializationError, ScenarioError, ValueError) as exc:
        return {"value": value, "status": f"error: {exc}", "eta_final": float("nan"),
                "min_radar_slack": float("nan"), "iterations": 0, "wall_time": 0.0}


def parse_values(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"--values: {exc}") from exc
    if not vals:
        raise argparse.ArgumentTypeError("--values: need at least one value")
    return vals


def cmd_sweep(args) -> int:
    cfg = load_scenario(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg, args.param, v, args.algo, args.max_iters, out / f"{args.param}_{i:02d}")
            for i, v in enumerate(args.values)]
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            results = list(pool.map(_sweep_one, jobs))
    else:
        results = [_sweep_one(j) for j in jobs]
    _write_csv(out / "sweep.csv", ["value", "eta_final", "min_radar_slack", "iterations", "status"],
               ([_num(r["value"]), _num(r["eta_final"]), _num(r["min_radar_slack"]), r["iterations"], r["status"]]
                for r in results))
    (out / "sweep.json").write_text(json.dumps({"param": args.param, "algorithm": args.algo, "runs": results},
                                               indent=2, default=float) + "\n")
    for r in results:
        print(f"{args.param}={r['value']:g}: eta {r['eta_final']:.6g} ({r['status']})")
    failed = [r for r in results if r["status"].startswith("error")]
    return EXIT_SWEEP_PARTIAL if failed else EXIT_OK


def cmd_fit(args) -> int:
    pairs = []
    with open(args.pairs, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                pairs.append((float(row[0]), float(row[1])))
            except (ValueError, IndexError):
                if pairs:
                    raise ValueError(f"{args.pairs}: bad row {row!r}")
                continue  # header line
    a, b = fit_error_surrogate(pairs)
    print(f"a={a:.10g} b={b:.10g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="uavisl", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="optimize one scenario")
    r.add_argument("--config", required=True)
    r.add_argument("--algo", choices=sorted(ALGORITHMS), default="proposed")
    r.add_argument("--out", required=True)
    r.add_argument("--seed", type=int, default=None, help="seed for perturbed extra starts")
    r.add_argument("--starts", type=int, default=1, help="number of starts (needs --seed when > 1)")
    r.add_argument("--max-iters", type=int, default=None)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="one run per parameter value")
    s.add_argument("--config", required=True)
    s.add_argument("--param", choices=SWEEPABLE, required=True)
    s.add_argument("--values", type=parse_values, required=True)
    s.add_argument("--algo", choices=sorted(ALGORITHMS), default="proposed")
    s.add_argument("--out", required=True)
    s.add_argument("--max-iters", type=int, default=None)
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_sweep)

    f = sub.add_parser("fit", help="fit error = a * count^-b to (count, error) pairs")
    f.add_argument("--pairs", required=True)
    f.set_defaults(func=cmd_fit)
    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("UAVISL_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if getattr(args, "starts", 1) > 1 and args.seed is None:
        print("error: --starts > 1 needs --seed", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InitializationError as exc:
        print(f"infeasible ({exc.constraint}): {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        if args.command == "fit":
            print(f"fit error: {exc}", file=sys.stderr)
            return EXIT_FIT
        log.exception("unexpected error")
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
