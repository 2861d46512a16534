"""Acceptance criteria; each test prints one PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v`` (the lines are printed
even when output is captured) or ``python tests/test_acceptance.py``.
"""

import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from ddlmpc import Topology, build_local_programs, required_local_length
from ddlmpc.bench import (BenchConfig, centralized_data_driven_check, exp_locality,
                          exp_optimality, exp_scaling, make_instance)
from ddlmpc.localsls import assemble_response, required_global_length
from ddlmpc.oracle import CentralizedDlmpc
from ddlmpc.response import achievability_residual, locality_mask

pytestmark = pytest.mark.slow

EPS = 1e-6


def report(request, tag, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} {tag}: {detail}"
    capman = request.config.pluginmanager.getplugin("capturemanager") if request else None
    if capman is not None:
        with capman.global_and_fixture_disabled():
            print("\n" + line)
    else:
        print(line)
    assert ok, line


def test_c1_optimality(request):
    start = time.perf_counter()
    res = exp_optimality(BenchConfig(n=16, d=2, horizon=5, steps=30, seed=7, rho=1.0, eps=EPS))
    elapsed = time.perf_counter() - start
    s = res.summary
    ok = s["max_state_diff"] <= 1e-3 and s["relative_cost_gap"] <= 1e-4 and elapsed <= 120
    report(request, "C1 distributed vs centralized (N=16 d=2 T=5 30 steps)", ok,
           f"max_state_diff={s['max_state_diff']:.2e}<=1e-3 "
           f"relative_cost_gap={s['relative_cost_gap']:.2e}<=1e-4 runtime={elapsed:.1f}s<=120s")


def test_c2_locality(request):
    res = exp_locality(BenchConfig(n=16, d=2, horizon=5, steps=0, seed=7, d_list=(1, 2, 3, 4)))
    opt = res.summary["optimal_costs"]
    costs = [opt[d] for d in (1, 2, 3, 4)]
    full, ric = res.summary["unlocalized_cost"], res.summary["riccati_cost"]
    mono = all(b <= a + 1e-8 for a, b in zip(costs, costs[1:]))
    gap4 = abs(costs[-1] - full) / full
    dp = abs(full - ric)
    ok = mono and gap4 <= 1e-3 and dp <= 1e-8
    report(request, "C2 cost vs locality d=1..4", ok,
           f"nonincreasing(tol 1e-8)={mono} costs={['%.10g' % c for c in costs]} "
           f"rel_gap(d=4,unlocalized)={gap4:.2e}<=1e-3 |unlocalized-riccati|={dp:.2e}<=1e-8")


def test_c3_data_length(request):
    small, big = Topology.chain(16), Topology.chain(121)
    l16 = required_local_length(small, 8, 2, 5)
    l121 = required_local_length(big, 60, 2, 5)
    g121 = required_global_length(big, 5)
    ok = l16 == l121 == 239 and g121 >= 5 * l121
    report(request, "C3 local data length N-invariant", ok,
           f"local(N=16)={l16} local(N=121)={l121} expected=239 "
           f"centralized(N=121)={g121}>=5x{l121}")


def test_c4_lemma_checks(request):
    combos, worst_ach, worst_fit, mask_ok = 0, 0.0, 0.0, True
    for seed in (0, 11, 23, 37):
        for N in (5, 8, 16):
            inst = make_instance(N, seed, 5, d_values=(1, 2))
            topo = inst.plant.topology
            rng = np.random.default_rng(seed)
            for d in (1, 2):
                progs = build_local_programs(inst.data, d, 5)
                cols = {i: p.project(rng.normal(size=(p.layout.size, p.layout.width)))
                        for i, p in progs.items()}
                phi = assemble_response(progs, cols)
                worst_ach = max(worst_ach, achievability_residual(inst.plant, phi))
                mask_ok &= phi.respects(locality_mask(topo, d))
                ref = CentralizedDlmpc(inst.plant, d, 5).solve(inst.x0).response
                for i, p in progs.items():
                    worst_fit = max(worst_fit, p.fit_residual(p.layout.from_blocks(ref, topo)))
                combos += 1
    ok = combos >= 20 and worst_ach <= 1e-8 and mask_ok and worst_fit <= 1e-8
    report(request, "C4 assembled achievability and representability", ok,
           f"combos={combos}>=20 max_achievability={worst_ach:.2e}<=1e-8 "
           f"mask_exact={mask_ok} max_fit_residual={worst_fit:.2e}<=1e-8")


def test_c5_admm_convergence(request):
    details, ok = [], True
    for n in (8, 16):
        r = centralized_data_driven_check(BenchConfig(n=n, d=2, horizon=5, seed=7, eps=EPS))
        good = (r["primal"] < EPS and r["dual"] < EPS and r["iterations"] <= 5000
                and r["trajectory_diff"] <= 10 * EPS)
        ok &= good
        details.append(f"N={n}: iters={r['iterations']}<=5000 primal={r['primal']:.1e} "
                       f"dual={r['dual']:.1e}<1e-6 frob_diff={r['trajectory_diff']:.2e}<=1e-5")
    report(request, "C5 ADMM residuals and centralized data-driven match", ok, "; ".join(details))


def test_c6_input_box(request):
    res = exp_optimality(BenchConfig(n=8, d=2, horizon=5, steps=30, seed=7, u_max=0.5))
    s = res.summary
    ok = (s["active_steps"] >= 1 and s["max_abs_input"] <= 0.5 + 1e-6
          and s["max_state_diff"] <= 1e-3)
    report(request, "C6 input box |u|<=0.5", ok,
           f"active_steps={s['active_steps']}>=1 max|u|={s['max_abs_input']:.9f}<=0.5+1e-6 "
           f"max_state_diff={s['max_state_diff']:.2e}<=1e-3")


def test_c7_scaling(request):
    res = exp_scaling(BenchConfig(d=2, horizon=5, seed=7, n_list=(9, 121), instances=3,
                                  scaling_steps=5))
    small, big = res.summary[9], res.summary[121]
    ratio = big["ms"] / small["ms"]
    same = small["dims"] == big["dims"] and len(small["dims"]) == 1
    ok = ratio <= 2.5 and same
    report(request, "C7 per-agent runtime and dimensions N=9 vs N=121", ok,
           f"ms/step/agent {small['ms']:.2f} -> {big['ms']:.2f} ratio={ratio:.2f}<=2.5 "
           f"(ms/iter {small['ms_per_iter']:.3f} -> {big['ms_per_iter']:.3f}) "
           f"interior_dims_equal={same} ({small['dims'][0]})")


def test_c8_property_suites(request):
    here = Path(__file__).parent
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider",
                           str(here / "test_properties.py")],
                          capture_output=True, text=True, cwd=here.parent)
    tail = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    report(request, "C8 property suites (topology, Hankel, KKT, rank1_prox, determinism)",
           proc.returncode == 0, tail)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
