"""Command-line front end.

    reebmag verify|flow|orbits|mane|growth [--config PATH] [--seed N] [--out DIR] [--threads N]

Every command writes ``<out>/<command>.json`` (``flow`` also writes
``<out>/flow.csv``).  Exit status: 0 success, 1 failed check or numerical
error, 2 configuration error.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
COMMANDS = ("verify", "flow", "orbits", "mane", "growth")


def build_parser():
    parser = argparse.ArgumentParser(prog="reebmag", description="Reeb and magnetic flow laboratory")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, default=None, help="YAML experiment file")
        p.add_argument("--seed", type=int, default=None, help="RNG seed (overrides the config)")
        p.add_argument("--out", type=Path, default=None, help="output directory (overrides the config)")
        p.add_argument("--threads", type=int, default=None, help="cap on XLA CPU threads")
    return parser


def _set_threads(n):
    """Must run before the first JAX computation initialises the backend."""
    if n is None:
        return
    if n < 1:
        raise SystemExit("--threads must be positive")
    extra = f"intra_op_parallelism_threads={n}"
    if n == 1:
        extra = "--xla_cpu_multi_thread_eigen=false " + extra
    os.environ["XLA_FLAGS"] = f"{os.environ.get('XLA_FLAGS', '')} {extra}".strip()
    os.environ["OMP_NUM_THREADS"] = str(n)


def cmd_verify(cfg):
    from .verify import run_suite

    passed, payload = run_suite(cfg)
    return passed, payload, {}


def cmd_flow(cfg):
    import numpy as np

    from .geometry import ChartPoint, reeb_vector
    from .integrate import endpoint_distance, integrate_magnetic, integrate_reeb
    from .magnetic import energies
    from .trajectory import TangentState

    sys_ = cfg.system
    m = sys_.manifold
    flow = cfg.raw["flow"]
    q0 = ChartPoint(np.asarray(flow["q0"], dtype=float), int(flow["chart"]))
    icfg = cfg.integrator
    if flow["kind"] == "reeb":
        traj = integrate_reeb(m, q0, icfg, speed=float(flow["speed"]))
        traj.meta["energies"] = energies(sys_, traj)
    else:
        v0 = flow["v0"]
        v0 = float(flow["speed"]) * reeb_vector(m, q0) if v0 is None else np.asarray(v0, dtype=float)
        traj = integrate_magnetic(sys_, TangentState(q0, v0), icfg)
    e = traj.meta["energies"]
    payload = {
        "system": sys_.describe(),
        "flow": {
            "kind": flow["kind"],
            "rows": len(traj),
            "dt": traj.meta["dt"],
            "max_time": traj.duration,
            "energy_start": float(e[0]),
            "energy_end": float(e[-1]),
            "relative_drift": float(np.max(np.abs(e - e[0])) / e[0]) if e[0] > 0 else 0.0,
            "return_distance": endpoint_distance(m, traj),
            "transitions": [list(t) for t in traj.meta["transitions"]],
            "csv": "flow.csv",
        },
    }
    passed = not traj.meta.get("drift_exceeded", False)
    return passed, payload, {"flow.csv": traj}


def cmd_orbits(cfg):
    from .orbits import dedup_geometric, find_reeb_orbits
    from .verify import default_seeds

    sys_ = cfg.system
    m = sys_.manifold
    seeds = cfg.seed_points() or default_seeds(m, cfg.seed)
    t_max = float(cfg.raw["t_max"])
    tol = float(cfg.raw["closure_tol"])
    orbits, misses = find_reeb_orbits(m, seeds, t_max, cfg.integrator.dt, tol, sys=sys_)
    census = dedup_geometric(m, orbits, t_max=t_max)
    payload = {
        "system": sys_.describe(),
        "census": {
            "t_max": t_max,
            "seeds": len(seeds),
            "seeds_without_orbit": misses,
            "orbits": [o.record() for o in orbits],
            "classes": census.classes,
            "class_count": len(census.classes),
            "degenerate_family_note": m.orbit_family_note,
        },
    }
    return True, payload, {}


def cmd_mane(cfg):
    from .geometry import FourierTorus
    from .mane import default_grid, default_loops, mane_bracket
    from .orbits import find_reeb_orbits
    from .verify import default_seeds

    sys_ = cfg.system
    m = sys_.manifold
    mane = cfg.raw["mane"]
    seeds = cfg.seed_points() or default_seeds(m, cfg.seed)
    orbits, _ = find_reeb_orbits(m, seeds, float(cfg.raw["t_max"]), cfg.integrator.dt, float(cfg.raw["closure_tol"]))
    loops = default_loops(m, orbits, speeds=tuple(float(s) for s in mane["loop_speeds"]))
    if isinstance(m, FourierTorus):
        grid = default_grid(m, n_torus=int(mane["grid"]))
    else:
        grid = default_grid(m, n_sphere_per_chart=int(mane["sphere_points_per_chart"]), seed=cfg.seed)
    bracket = mane_bracket(sys_, cfg.basis, loops, grid, cfg.optimizer)
    rec = bracket.record()
    rec["midpoint"] = 0.5 * (bracket.lower + bracket.upper)
    rec["reeb_orbits_in_loop_family"] = len(orbits)
    return True, {"system": sys_.describe(), "bracket": rec}, {}


def cmd_growth(cfg):
    from .orbits import growth_report
    from .verify import default_seeds

    sys_ = cfg.system
    seeds = cfg.seed_points() or default_seeds(sys_.manifold, cfg.seed)
    report = growth_report(
        sys_,
        seeds,
        float(cfg.raw["t_max"]),
        [float(k) for k in cfg.raw["kappas"]],
        t_values=cfg.raw["t_values"],
        dt=cfg.integrator.dt,
        tol=float(cfg.raw["closure_tol"]),
    )
    return report["verdict"] == "holds", {"growth": report}, {}


HANDLERS = {
    "verify": cmd_verify,
    "flow": cmd_flow,
    "orbits": cmd_orbits,
    "mane": cmd_mane,
    "growth": cmd_growth,
}


def run_command(command, cfg, out_dir):
    """Run one command and write its artifacts; returns the exit status."""
    from .errors import ConfigError, ReebMagError
    from .report import envelope, write_report
    from .trajectory import write_csv

    try:
        passed, payload, extra = HANDLERS[command](cfg)
        status = "pass" if passed else "fail"
    except ConfigError:
        raise
    except ReebMagError as exc:
        passed, payload, extra = False, {"error": {"type": type(exc).__name__, "message": str(exc)}}, {}
        status = "error"
    out_dir.mkdir(parents=True, exist_ok=True)
    report = envelope(command, cfg, payload, status)
    write_report(out_dir / f"{command}.json", report)
    for name, traj in extra.items():
        write_csv(traj, out_dir / name, manifold=cfg.manifold)
    return EXIT_OK if passed else EXIT_FAIL


def main(argv=None):
    args = build_parser().parse_args(argv)
    _set_threads(args.threads)

    from .config import load_config
    from .errors import ConfigError

    try:
        cfg = load_config(args.config, seed=args.seed)
        out_dir = args.out if args.out is not None else Path(cfg.raw["output"])
        code = run_command(args.command, cfg, out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    label = {EXIT_OK: "ok", EXIT_FAIL: "FAILED"}[code]
    print(f"{args.command}: {label} -> {out_dir / (args.command + '.json')}")
    return code


def run():
    sys.exit(main())


if __name__ == "__main__":
    run()
