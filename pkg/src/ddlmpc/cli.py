"""Command-line entry point.

Exit codes: 0 success, 2 argument errors, 3 data or PE errors, 4 solver
nonconvergence or infeasibility. Failures print one JSON line prefixed with
``error:`` on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .exceptions import ArgumentError, DdlmpcError

SUBCOMMANDS = ("gen-system", "collect-data", "run-mpc", "exp-optimality", "exp-locality",
               "exp-scaling", "plot")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ArgumentError(message)


def _int_list(text):
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--n", type=int, default=16, help="number of subsystems")
    common.add_argument("--d", type=int, default=2, help="locality radius")
    common.add_argument("--horizon", type=int, default=5, help="prediction horizon T")
    common.add_argument("--steps", type=int, default=30, help="closed-loop steps")
    common.add_argument("--seed", type=int, default=0, help="first candidate plant seed")
    common.add_argument("--rho", type=float, default=1.0, help="ADMM penalty")
    common.add_argument("--eps", type=float, default=1e-6, help="ADMM tolerances")
    common.add_argument("--max-iter", type=int, default=5000, dest="max_iter",
                        help="ADMM iteration cap")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--config", help="JSON file whose keys override the flags")

    parser = _Parser(prog="ddlmpc", description="Distributed data-driven localized MPC")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("gen-system", parents=[common], help="write a chain plant as JSON")
    p = sub.add_parser("collect-data", parents=[common], help="record an excitation experiment")
    p.add_argument("--system", help="plant JSON (default: generate from --n/--seed)")
    p.add_argument("--length", type=int, help="number of transitions (default: minimum + margin)")
    p = sub.add_parser("run-mpc", parents=[common], help="closed loop of the distributed controller")
    p.add_argument("--system", required=True, help="plant JSON used as the simulator")
    p.add_argument("--data", required=True, help="trajectory CSV from collect-data")
    p.add_argument("--u-max", type=float, dest="u_max", help="input box |u| <= u_max")
    p.add_argument("--x0-seed", type=int, dest="x0_seed", help="seed of the random initial state")
    p = sub.add_parser("exp-optimality", parents=[common], help="distributed vs centralized")
    p.add_argument("--u-max", type=float, dest="u_max")
    p.add_argument("--x0-scale", type=float, dest="x0_scale")
    p = sub.add_parser("exp-locality", parents=[common], help="sweep the locality radius")
    p.add_argument("--d-list", type=_int_list, dest="d_list")
    p = sub.add_parser("exp-scaling", parents=[common], help="runtime and data length vs N")
    p.add_argument("--n-list", type=_int_list, dest="n_list")
    p.add_argument("--instances", type=int)
    p.add_argument("--scaling-steps", type=int, dest="scaling_steps")
    p = sub.add_parser("plot", parents=[common], help="render CSV files to SVG")
    p.add_argument("csv", nargs="+", help="CSV files to plot")
    return parser


def _options(args):
    opts = {k: v for k, v in vars(args).items() if v is not None}
    if args.config:
        from .bench import load_config
        override = load_config(args.config)
        if not isinstance(override, dict):
            raise ArgumentError("config must be a JSON object")
        opts.update({k.replace("-", "_"): v for k, v in override.items()})
    return opts


def _bench_config(opts, extra=()):
    from .bench import BenchConfig
    keys = ("n", "d", "horizon", "steps", "seed", "rho", "eps", "max_iter") + tuple(extra)
    return BenchConfig.from_mapping({k: opts[k] for k in keys if k in opts})


def _gen_system(opts):
    from .bench import GROWTH_LIMIT
    from .localsls import required_local_length
    from .plant import make_chain_system, select_benchmark_seed
    from .topology import Topology

    topo = Topology.chain(opts["n"])
    length = max(required_local_length(topo, i, opts["d"], opts["horizon"])
                 for i in range(opts["n"])) + 10
    seed = select_benchmark_seed(opts["n"], start=opts["seed"],
                                 max_radius=GROWTH_LIMIT ** (1.0 / length))
    plant = make_chain_system(opts["n"], seed)
    doc = plant.to_json()
    doc["seed"] = seed
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    path = out / "system.json"
    path.write_text(json.dumps(doc, indent=1))
    return [path]


def _load_system(path):
    from .plant import LtiSystem
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ArgumentError(f"cannot read system {path}: {exc}") from exc
    return LtiSystem.from_json(doc), doc.get("seed", 0)


def _collect(opts):
    from .datalog import collect_excited_data
    from .localsls import required_local_length
    from .plant import LtiSystem

    if "system" in opts:
        plant, seed = _load_system(opts["system"])
    else:
        path = _gen_system(opts)[0]
        plant, seed = LtiSystem.from_json(json.loads(path.read_text())), json.loads(
            path.read_text())["seed"]
    topo = plant.topology
    length = opts.get("length") or max(
        required_local_length(topo, i, opts["d"], opts["horizon"])
        for i in range(topo.node_count)) + 10
    traj = collect_excited_data(plant, length, seed=int(seed))
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    path = out / "data.csv"
    traj.to_csv(path)
    return [path]


def _run_mpc(opts):
    from .datalog import TrajectoryData
    from .estimator import DataDrivenLocalizedMPC
    from .response import ConstraintSpec

    plant, seed = _load_system(opts["system"])
    topo = plant.topology
    try:
        traj = TrajectoryData.from_csv(Path(opts["data"]), topo)
    except OSError as exc:
        raise ArgumentError(f"cannot read data {opts['data']}: {exc}") from exc
    cons = ConstraintSpec.input_box(topo, opts["u_max"]) if "u_max" in opts else None
    est = DataDrivenLocalizedMPC(d=opts["d"], horizon=opts["horizon"], rho=opts["rho"],
                                 eps_primal=opts["eps"], eps_dual=opts["eps"],
                                 max_iter=opts["max_iter"], constraints=cons)
    est.fit(traj)
    x0 = np.random.default_rng([int(opts.get("x0_seed", seed)), 1]).uniform(
        -1.0, 1.0, topo.n_states)
    result = est.run(plant, x0, opts["steps"])
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    p1, p2 = out / "closed_loop.csv", out / "stats.csv"
    result.trajectory.to_csv(p1)
    result.stats_csv(p2)
    (out / "summary.json").write_text(json.dumps({"cost": result.cost, "steps": opts["steps"]}))
    return [p1, p2, out / "summary.json"]


def _experiment(name, opts):
    from . import bench

    if name == "exp-optimality":
        res = bench.exp_optimality(_bench_config(opts, ("u_max", "x0_scale")))
    elif name == "exp-locality":
        res = bench.exp_locality(_bench_config(opts, ("d_list",)))
    else:
        res = bench.exp_scaling(_bench_config(opts, ("n_list", "instances", "scaling_steps")))
    path = res.write(opts["out"])
    summary = {k: v for k, v in res.summary.items()}
    (Path(opts["out"]) / f"{res.name}_summary.json").write_text(
        json.dumps(summary, default=str, indent=1))
    return [path]


def _plot(opts):
    from .plotting import plot_csv
    return [plot_csv(p, opts["out"]) for p in opts["csv"]]


def run(argv=None):
    """Parse ``argv`` and run one subcommand; returns the list of written files."""
    args = build_parser().parse_args(argv)
    opts = _options(args)
    cmd = args.command
    if cmd == "gen-system":
        return _gen_system(opts)
    if cmd == "collect-data":
        return _collect(opts)
    if cmd == "run-mpc":
        return _run_mpc(opts)
    if cmd == "plot":
        return _plot(opts)
    return _experiment(cmd, opts)


def main(argv=None):
    try:
        for path in run(argv):
            print(path)
    except DdlmpcError as exc:
        info = {"code": exc.exit_code, "kind": type(exc).__name__, "message": str(exc)}
        diag = getattr(exc, "diagnostics", None)
        if diag:
            info["diagnostics"] = diag
        print("error: " + json.dumps(info, default=str), file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
