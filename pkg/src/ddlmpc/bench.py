"""Chain-benchmark experiments with CSV output.

Every experiment is deterministic given its configuration, apart from the
timing columns.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from ._validation import check_int, check_positive
from .consensus import ConsensusSolver, run_receding_horizon
from .datalog import collect_excited_data
from .exceptions import ArgumentError
from .localsls import (build_global_program, build_local_programs, required_global_length,
                       required_local_length)
from .oracle import (CentralizedDlmpc, DataDrivenCentralized, lqr_cost,
                     run_centralized_closed_loop)
from .plant import make_chain_system, select_benchmark_seed
from .response import ConstraintSpec, CostSpec

GROWTH_LIMIT = 1e6  # largest tolerated open-loop amplification over an excitation record


@dataclass
class BenchConfig:
    """Experiment settings; ``seed`` is the first candidate plant seed."""

    n: int = 16
    d: int = 2
    horizon: int = 5
    steps: int = 30
    seed: int = 0
    rho: float = 1.0
    eps: float = 1e-6
    max_iter: int = 5000
    u_max: float | None = None
    x0_scale: float = 1.0
    d_list: tuple = (1, 2, 3, 4)
    n_list: tuple = (9, 16, 32, 64, 121)
    instances: int = 3
    scaling_steps: int = 5
    data_margin: int = 10
    n_jobs: int = 1

    def __post_init__(self):
        check_int(self.n, "n", minimum=1)
        check_int(self.d, "d", minimum=0)
        check_int(self.horizon, "horizon", minimum=1)
        check_int(self.steps, "steps", minimum=0)
        check_int(self.seed, "seed", minimum=0)
        check_positive(self.rho, "rho")
        check_positive(self.eps, "eps")
        check_int(self.max_iter, "max_iter", minimum=1)
        if self.u_max is not None:
            check_positive(self.u_max, "u_max")
        check_positive(self.x0_scale, "x0_scale", strict=False)
        self.d_list = tuple(check_int(v, "d_list entry", minimum=0) for v in self.d_list)
        self.n_list = tuple(check_int(v, "n_list entry", minimum=1) for v in self.n_list)
        if not self.d_list or not self.n_list:
            raise ArgumentError("d_list and n_list must be non-empty")
        check_int(self.instances, "instances", minimum=1)
        check_int(self.scaling_steps, "scaling_steps", minimum=1)
        check_int(self.data_margin, "data_margin", minimum=0)
        check_int(self.n_jobs, "n_jobs", minimum=1)

    @classmethod
    def from_mapping(cls, values):
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ArgumentError(f"unknown config key(s): {sorted(unknown)}")
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in values.items()})

    def replace(self, **changes):
        data = asdict(self)
        data.update(changes)
        return BenchConfig(**data)


@dataclass
class Instance:
    """A pinned chain plant with its excitation record and initial state."""

    plant: object
    plant_seed: int
    data: object
    x0: np.ndarray
    horizon: int
    data_length: int


def make_instance(N, seed, horizon, d_values=(2,), margin=10, need_global=False, x0_scale=1.0):
    """Pick a well-conditioned chain, collect one excitation record and draw ``x0``.

    The record is long enough for every node's local program at every ``d``
    in ``d_values`` (and for the global program if ``need_global``). Plants
    whose open-loop growth over that record would exceed ``GROWTH_LIMIT`` are
    skipped, so the Hankel matrices stay numerically meaningful.
    """
    from .topology import Topology

    topo = Topology.chain(N)
    need = max(required_local_length(topo, i, d, horizon) for d in d_values for i in range(N))
    if need_global:
        need = max(need, required_global_length(topo, horizon))
    length = need + margin
    max_radius = GROWTH_LIMIT ** (1.0 / length)
    plant_seed = select_benchmark_seed(N, start=seed, max_radius=max_radius)
    plant = make_chain_system(N, plant_seed)
    data = collect_excited_data(plant, length, seed=plant_seed)
    x0 = x0_scale * np.random.default_rng([plant_seed, 1]).uniform(-1.0, 1.0, plant.n_states)
    return Instance(plant, plant_seed, data, x0, horizon, length)


def _constraints(cfg, topo):
    return ConstraintSpec.input_box(topo, cfg.u_max) if cfg.u_max is not None else None


def _solver(cfg, inst, d, constraints=None):
    programs = build_local_programs(inst.data, d, inst.horizon)
    return ConsensusSolver(programs, inst.plant.topology, d, CostSpec.identity(inst.plant.topology),
                           constraints, cfg.rho, cfg.eps, cfg.eps, cfg.max_iter, cfg.n_jobs)


def _csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


@dataclass
class ExperimentResult:
    name: str
    csv: str
    summary: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict, repr=False)

    def write(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / f"{self.name}.csv"
        path.write_text(self.csv)
        return path


OPTIMALITY_HEADER = ("t", "x_d3lmpc_theta1", "x_d3lmpc_omega1", "x_centralized_theta1",
                     "x_centralized_omega1", "abs_diff", "cost_d3lmpc", "cost_centralized")


def exp_optimality(cfg):
    """Distributed data-driven closed loop against the centralized model-based one.

    With ``cfg.u_max`` set, both arms carry the input box and the reference is
    the centralized box-QP solve.
    """
    if cfg.steps == 0:
        return ExperimentResult("optimality", _csv(OPTIMALITY_HEADER, []),
                                {"max_state_diff": 0.0, "relative_cost_gap": 0.0})
    inst = make_instance(cfg.n, cfg.seed, cfg.horizon, (cfg.d,), cfg.data_margin,
                         x0_scale=cfg.x0_scale)
    topo = inst.plant.topology
    cons = _constraints(cfg, topo)
    solver = _solver(cfg, inst, cfg.d, cons)
    dist = run_receding_horizon(solver, inst.plant, inst.x0, cfg.steps)
    oracle = CentralizedDlmpc(inst.plant, cfg.d, cfg.horizon, solver.cost, cons)
    ref = run_centralized_closed_loop(oracle, inst.plant, inst.x0, cfg.steps)
    xs, xr = dist.trajectory.states, ref.trajectory.states
    rows, cd, cr = [], 0.0, 0.0
    from .response import stage_cost
    for t in range(cfg.steps + 1):
        if t:
            cd += stage_cost(xs[:, t - 1], dist.trajectory.inputs[:, t - 1], solver.cost, topo)
            cr += stage_cost(xr[:, t - 1], ref.trajectory.inputs[:, t - 1], solver.cost, topo)
        rows.append((t, xs[0, t], xs[1, t], xr[0, t], xr[1, t],
                     float(np.max(np.abs(xs[:, t] - xr[:, t]))), cd, cr))
    max_diff = float(np.max(np.abs(xs - xr)))
    gap = abs(dist.cost - ref.cost) / max(abs(ref.cost), 1e-300)
    rows.append(("summary", "", "", "", "", max_diff, dist.cost, ref.cost))
    summary = {"max_state_diff": max_diff, "relative_cost_gap": gap,
               "plant_seed": inst.plant_seed, "max_admm_iters": max(s.admm_iters for s in dist.stats),
               "max_primal": max(s.primal_res for s in dist.stats),
               "max_dual": max(s.dual_res for s in dist.stats)}
    if cons is not None:
        u = dist.trajectory.inputs
        summary["max_abs_input"] = float(np.max(np.abs(u)))
        summary["active_steps"] = int(np.sum(np.any(np.abs(ref.trajectory.inputs) >= cfg.u_max - 1e-6,
                                                     axis=0)))
        summary["max_input_diff"] = float(np.max(np.abs(u - ref.trajectory.inputs)))
    return ExperimentResult("optimality", _csv(OPTIMALITY_HEADER, rows), summary,
                            {"distributed": dist, "centralized": ref, "instance": inst})


LOCALITY_HEADER = ("d", "closed_loop_cost", "optimal_cost", "centralized_cost",
                   "required_local_length")


def exp_locality(cfg):
    """Sweep the locality radius on one instance.

    ``optimal_cost`` is the model-based optimum of the first MPC problem at
    radius ``d``, ``centralized_cost`` the same without locality and
    ``closed_loop_cost`` the realized cost of the distributed controller.
    """
    d_list = tuple(sorted(cfg.d_list))
    inst = make_instance(cfg.n, cfg.seed, cfg.horizon, d_list, cfg.data_margin,
                         x0_scale=cfg.x0_scale)
    topo = inst.plant.topology
    cost = CostSpec.identity(topo)
    full = CentralizedDlmpc(inst.plant, None, cfg.horizon, cost).solve(inst.x0).cost
    riccati = lqr_cost(inst.plant, cfg.horizon, inst.x0, cost)
    interior = topo.node_count // 2
    rows, opt = [], {}
    for d in d_list:
        opt[d] = CentralizedDlmpc(inst.plant, d, cfg.horizon, cost).solve(inst.x0).cost
        if cfg.steps:
            solver = _solver(cfg, inst, d)
            closed = run_receding_horizon(solver, inst.plant, inst.x0, cfg.steps).cost
        else:
            closed = 0.0
        rows.append((d, closed, opt[d], full,
                     required_local_length(topo, interior, d, cfg.horizon)))
    summary = {"optimal_costs": opt, "unlocalized_cost": full, "riccati_cost": riccati,
               "plant_seed": inst.plant_seed}
    return ExperimentResult("locality", _csv(LOCALITY_HEADER, rows), summary)


SCALING_HEADER = ("N", "instance", "avg_ms_per_step_per_agent", "admm_iters_avg",
                  "local_data_len", "centralized_data_len", "messages_per_step", "interior_dims")


def interior_dimensions(solver, node):
    dims = solver.agent_dimensions(node)
    return (f"H{dims['hankel_rows']}x{dims['hankel_cols']};kept{dims['kept']};"
            f"eq{dims['eq_rows']};"
            f"X{'x'.join(map(str, dims['row_x']))};U{'x'.join(map(str, dims['row_u']))}")


def exp_scaling(cfg):
    """Per-agent online cost and data requirements as the chain grows.

    Timing averages the MPC steps after the first (warm-started ones) and
    excludes program construction.
    """
    rows, per_n = [], {}
    for N in cfg.n_list:
        start = cfg.seed
        for k in range(cfg.instances):
            # well-conditioned seeds are sparse at large N; search past the last one
            inst = make_instance(N, start, cfg.horizon, (cfg.d,), cfg.data_margin,
                                 x0_scale=cfg.x0_scale)
            start = inst.plant_seed + 1
            topo = inst.plant.topology
            solver = _solver(cfg, inst, cfg.d)
            loop = run_receding_horizon(solver, inst.plant, inst.x0, cfg.scaling_steps)
            later = loop.stats[1:] or loop.stats
            ms = float(np.mean([s.wall_ms_per_agent_avg for s in later]))
            iters = float(np.mean([s.admm_iters for s in later]))
            msgs = float(np.mean([s.messages for s in loop.stats]))
            interior = N // 2
            dims = interior_dimensions(solver, interior)
            rows.append((N, k, ms, iters, required_local_length(topo, interior, cfg.d, cfg.horizon),
                         required_global_length(topo, cfg.horizon), msgs, dims))
            per_n.setdefault(N, []).append({"ms": ms, "iters": iters, "dims": dims,
                                            "ms_per_iter": ms / max(iters, 1.0)})
    summary = {N: {"ms": float(np.mean([r["ms"] for r in v])),
                   "ms_per_iter": float(np.mean([r["ms_per_iter"] for r in v])),
                   "iters": float(np.mean([r["iters"] for r in v])),
                   "dims": sorted({r["dims"] for r in v})} for N, v in per_n.items()}
    return ExperimentResult("scaling", _csv(SCALING_HEADER, rows), summary)


def centralized_data_driven_check(cfg):
    """Distributed first solve against the centralized data-driven solve (Frobenius)."""
    inst = make_instance(cfg.n, cfg.seed, cfg.horizon, (cfg.d,), cfg.data_margin, need_global=True,
                         x0_scale=cfg.x0_scale)
    topo = inst.plant.topology
    cons = _constraints(cfg, topo)
    solver = _solver(cfg, inst, cfg.d, cons)
    res = solver.solve(inst.x0)
    xs, us = solver.predicted_trajectory()
    program = build_global_program(inst.data, topo, cfg.d, cfg.horizon + 1)
    ref = DataDrivenCentralized(program, solver.cost, cons).solve(inst.x0)
    diff = float(np.sqrt(np.linalg.norm(xs - ref.states) ** 2 + np.linalg.norm(us - ref.inputs) ** 2))
    return {"iterations": res.iterations, "primal": res.primal_residual, "dual": res.dual_residual,
            "trajectory_diff": diff, "plant_seed": inst.plant_seed}


def load_config(path):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ArgumentError(f"cannot read config {path}: {exc}") from exc
