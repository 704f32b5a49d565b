"""Acceptance gate: one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s``. The ensemble criteria
are the slow ones; every test carries its own wall-clock budget.
"""

import math
import time

import numpy as np
import pytest

from seqexp.diffusion import (DiffusionModel, check_qvi_residuals,
                              simulate_first_exit, solve_pair, stopping_stats)
from seqexp.model import ActionPayoff, prune_dominated
from seqexp.policies import MNLBanditPolicy
from seqexp.presets import (build_diffusion_policies, example1_instance,
                            example2_asymptotics, example2_instance,
                            fixed_payoff_instance_for_launches, run_benchmarks,
                            run_stopping_value, run_tables2, table1_experiments,
                            table5_market)
from seqexp.sim import (SimConfig, cumulative_regret, mean_clairvoyant_reward,
                        terminal_regret)
from seqexp.solver import STOP, BeliefGrid, solve

from test_properties import run_all_properties


def _report(n, elapsed, detail=""):
    print(f"\nACCEPTANCE {n}: PASS ({elapsed:.1f}s) {detail}")


def _runs(labels, nodes):
    """Contiguous equal-label runs as {label: [(lo, hi), ...]}."""
    out = {}
    i = 0
    while i < len(labels):
        j = i
        while j + 1 < len(labels) and labels[j + 1] == labels[i]:
            j += 1
        out.setdefault(labels[i], []).append((nodes[i], nodes[j]))
        i = j + 1
    return out


def test_criterion_1_example1_reproduction():
    t0 = time.perf_counter()
    inst = example1_instance()
    vf, report = solve(inst, BeliefGrid(1e-3), 1e-3)
    elapsed = time.perf_counter() - t0
    assert elapsed < 10.0
    assert report.final_residual <= 1e-3

    # experimentation region around the central payoff kink
    mid = [iv for iv in report.continuation_intervals if iv[0] < 0.5 < iv[1]]
    assert len(mid) == 1
    lo, hi = mid[0]
    assert abs(lo - 0.31) <= 0.02 and abs(hi - 0.69) <= 0.02

    # stopped with action 2 on [0.1, 0.31]
    nodes = vf.grid.nodes
    band = (nodes >= 0.12) & (nodes <= 0.29)
    assert np.all(vf.choice[band] == STOP)
    for d in nodes[band][::10]:
        assert inst.best_action(float(d)).id == 2

    # experiment choices inside the central region
    labels = [vf.choice_id(i) for i in range(vf.grid.n_nodes)]
    runs = _runs(labels, nodes)
    run3 = [r for r in runs.get(3, []) if r[0] <= 0.48 <= r[1]]
    run4 = [r for r in runs.get(4, []) if r[0] <= 0.55 <= r[1]]
    assert run3 and run4
    a3, b3 = run3[0]
    a4, b4 = run4[0]
    assert abs(a3 - 0.45) <= 0.02 and abs(b3 - 0.51) <= 0.02
    assert abs(a4 - 0.51) <= 0.02 and abs(b4 - 0.61) <= 0.02
    _report(1, elapsed, f"region ({lo:.3f},{hi:.3f}); exp3 ({a3:.3f},{b3:.3f}); "
                        f"exp4 ({a4:.3f},{b4:.3f})")


def test_criterion_2_dominance_pruning():
    exps = table1_experiments()
    best = math.inf
    for _ in range(5):
        t0 = time.perf_counter()
        kept, elim = prune_dominated(exps)
        best = min(best, time.perf_counter() - t0)
    assert sorted(e.id for e in elim) == [1, 8, 9]
    assert sorted(e.id for e in kept) == [2, 3, 4, 5, 6, 7]
    assert best < 1e-3
    _report(2, best, f"eliminated {{1,8,9}} in {best*1e3:.3f} ms")


def test_criterion_3_maximum_volatility():
    t0 = time.perf_counter()
    asyms = example2_asymptotics()
    vols = np.array([a.vol_term for a in asyms])
    np.testing.assert_allclose(vols, [0.16, 0.21, 0.24, 0.25, 0.24, 0.21],
                               atol=1e-12)
    winner = max(asyms, key=lambda a: a.vol_term)
    assert winner.experiment_id == 5

    # exact DP at high scale: the chosen experiment collapses to 5 on the
    # continuation region. The mesh must resolve the shrunken belief jumps
    # and a one-jump band at each stop boundary is excluded, where the
    # value kink leaves the comparison unresolvable at any mesh.
    inst = example2_instance(1e4)
    vf, _ = solve(inst, BeliefGrid(1e-4), 1e-9)
    nodes = vf.grid.nodes
    cont = vf.choice != STOP
    band = 3e-3
    interior = np.zeros_like(cont)
    for lo, hi in vf.continuation_intervals():
        interior |= (nodes >= lo + band) & (nodes <= hi - band)
    interior &= cont
    assert interior.sum() > 1000
    ids = np.array([vf.experiment_ids[c] if c != STOP else 0 for c in vf.choice])
    assert np.all(ids[interior] == 5)
    elapsed = time.perf_counter() - t0
    assert elapsed < 120.0
    _report(3, elapsed, f"winner experiment 5; DP collapse on {interior.sum()} nodes")


def test_criterion_4_free_boundary():
    t0 = time.perf_counter()
    model = DiffusionModel(sigma2=4.0, r=1.0)
    assert abs(model.gamma - (1 + math.sqrt(3)) / 2) <= 1e-12
    left = ActionPayoff(id=2, alpha=4.0, beta=-5.0)
    right = ActionPayoff(id=3, alpha=0.0, beta=3.0)
    sol = solve_pair(left, right, model)
    assert abs(sol.lo - 0.295) <= 3e-3
    assert abs(sol.continuation_value(sol.lo) - left.value(sol.lo)) <= 1e-8
    assert abs(sol.continuation_derivative(sol.lo) - left.beta) <= 1e-8
    assert abs(sol.continuation_value(sol.hi) - right.value(sol.hi)) <= 1e-8
    assert abs(sol.continuation_derivative(sol.hi) - right.beta) <= 1e-8

    from oracles import fd_variational_solve
    nodes, v = fd_variational_solve(sol.payoff, model.sigma2, model.r, mesh=1e-3)
    sup = float(np.abs(sol.value(nodes) - v).max())
    assert sup < 1e-3
    _report(4, time.perf_counter() - t0,
            f"gamma exact; lo {sol.lo:.4f}; oracle sup-diff {sup:.2e}")


def test_criterion_5_composition(fig4_composed):
    t0 = time.perf_counter()
    dv = fig4_composed  # compose_value already enforces the C1 check
    res_cont, res_all = check_qvi_residuals(dv)
    assert res_cont <= 1e-6 and res_all <= 1e-6
    # explicit smoothness audit at every interior breakpoint
    from seqexp.diffusion import _tag_derivative
    worst = 0.0
    for k, b in enumerate(dv.breakpoints[1:-1], start=1):
        dl = _tag_derivative(dv, dv.tags[k - 1], float(b), -1)
        dr = _tag_derivative(dv, dv.tags[k], float(b), +1)
        worst = max(worst, abs(dl - dr))
    assert worst <= 1e-6
    _report(5, time.perf_counter() - t0,
            f"residuals ({res_cont:.2e}, {res_all:.2e}); C1 gap {worst:.2e}")


def test_criterion_6_exit_statistics():
    t0 = time.perf_counter()
    model = DiffusionModel(sigma2=4.0, r=1.0)
    left = ActionPayoff(id=2, alpha=4.0, beta=-5.0)
    right = ActionPayoff(id=3, alpha=0.0, beta=3.0)
    base = solve_pair(left, right, model)
    pair = base.__class__(**{**base.__dict__, "lo": 0.4, "hi": 0.6})
    p, tau = stopping_stats(pair, model, 0.5)
    assert p == 0.5
    assert tau == pytest.approx(0.040546, abs=5e-6)
    tau_mc, hit, _ = simulate_first_exit(model, 0.5, 0.4, 0.6, dt=1e-4,
                                         n_paths=100_000, seed=2024)
    assert np.all(hit >= 0)
    assert tau_mc.mean() == pytest.approx(tau, rel=0.02)
    p_mc = float((hit == 1).mean())
    assert p_mc == pytest.approx(0.5, abs=3 * math.sqrt(0.25 / len(hit)))
    elapsed = time.perf_counter() - t0
    assert elapsed < 30.0
    _report(6, elapsed, f"E[tau] {tau:.6f} vs MC {tau_mc.mean():.6f}; p {p_mc:.4f}")


def test_criterion_7_tables2_trend():
    t0 = time.perf_counter()
    table = run_tables2(n_instances=100, ks=(1.0, 1e2, 1e4), seed=20240801)
    elapsed = time.perf_counter() - t0
    assert elapsed < 1800.0
    mv = {k: table.get("optimality_gap", "MV", k) for k in (1.0, 1e2, 1e4)}
    a = {k: table.get("optimality_gap", "A", k) for k in (1.0, 1e2, 1e4)}
    for k in (1.0, 1e2, 1e4):
        print(f"\n  k={k:<8g} MV mean {mv[k].mean:.4%} max {mv[k].max:.4%}   "
              f"A mean {a[k].mean:.4%} max {a[k].max:.4%}")
    assert mv[1.0].mean <= 0.02
    assert mv[1.0].max <= 0.06
    assert mv[1e2].mean < mv[1.0].mean
    assert mv[1e4].mean < mv[1e2].mean
    assert a[1e4].mean < 0.005 and mv[1e4].mean < 0.005
    # Reference data has the static policy trailing the adaptive one at the
    # unscaled size. With the equal-relative-error kernel the static pick
    # coincides with the adaptive pick at the uniform belief and its gap
    # comes out smaller, so this ordering does not reproduce; see the
    # failure analysis in the project notes.
    assert a[1.0].mean >= mv[1.0].mean, (
        f"static-policy mean gap {a[1.0].mean:.4%} fell below the adaptive "
        f"policy's {mv[1.0].mean:.4%}; every other clause of this criterion "
        "passed (see printed table)"
    )
    _report(7, elapsed,
            "MV means " + ", ".join(f"{mv[k].mean:.4%}@k={k:g}" for k in (1.0, 1e2, 1e4)))


def test_criterion_8_benchmark_ordering():
    t0 = time.perf_counter()
    table = run_benchmarks(n_instances=100, seed=20240802, n=10)
    elapsed = time.perf_counter() - t0
    assert elapsed < 3600.0
    mr = table.get("relative_error_integral", "MR").mean
    la = table.get("relative_error_integral", "LA").mean
    f = table.get("relative_error_integral", "F").mean
    assert abs(mr) <= 0.005
    assert la >= 0.05
    assert f >= 0.05
    _report(8, elapsed, f"MR {mr:.4%}, LA {la:.2%}, F {f:.2%}")


def test_criterion_9_value_of_stopping():
    t0 = time.perf_counter()
    Ts = (5, 10, 20, 40, 60, 80, 120, 200)
    table = run_stopping_value(n_instances=100, seed=20240803, Ts=Ts)
    elapsed = time.perf_counter() - t0
    at_most = [table.get("value_of_stopping_at_most", "MV", t).mean for t in Ts]
    exact = [table.get("value_of_stopping_exactly", "MV", t).mean for t in Ts]
    for a, b in zip(at_most, at_most[1:]):
        assert b <= a + 1e-9
    interior_min = min(exact[1:-1])
    assert interior_min < exact[0]
    assert interior_min < exact[-1]
    _report(9, elapsed,
            f"at-most {at_most[0]:.3f}->{at_most[-1]:.3f}; "
            f"exactly {exact[0]:.3f} \\ {interior_min:.3f} / {exact[-1]:.3f}")


def test_criterion_10_regret():
    t0 = time.perf_counter()
    market = table5_market()
    inst, dmap = fixed_payoff_instance_for_launches(market)
    pol = build_diffusion_policies(inst)
    cfg = SimConfig(seed=20240804, replications=500)
    clair = mean_clairvoyant_reward(market, cfg)
    mv_mean, mv_se = terminal_regret(market, pol.maxvol, 10_000, cfg, dmap)
    assert mv_mean <= 0.01 * clair

    cum = {}
    for T in (100, 1000, 10_000):
        bandit = MNLBanditPolicy([p.id for p in market.products],
                                 [p.margin for p in market.products], horizon=T)
        cum[T], _ = cumulative_regret(market, bandit, T, cfg, dmap)
    assert cum[1000] < cum[100]
    assert cum[10_000] < cum[1000]

    mv3, se3 = cumulative_regret(market, pol.maxvol, 1000, cfg, dmap)
    mv4, se4 = cumulative_regret(market, pol.maxvol, 10_000, cfg, dmap)
    assert mv4 >= mv3 - 2 * math.hypot(se3, se4)
    elapsed = time.perf_counter() - t0
    assert elapsed < 3600.0
    _report(10, elapsed,
            f"MV terminal {mv_mean/clair:.4%} of clairvoyant; bandit per-vote "
            f"{cum[100]:.2f} > {cum[1000]:.2f} > {cum[10_000]:.2f}; "
            f"MV per-vote {mv3:.2f} -> {mv4:.2f}")


def test_criterion_11_property_suites():
    t0 = time.perf_counter()
    run_all_properties()
    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0
    _report(11, elapsed, "martingale, convexity, contraction, interval structure, "
                         "sandwich, calibration, sales payoff")
