import math

import numpy as np
import pytest

from seqexp.model import Hypothesis
from seqexp.policies import (AlwaysStopPolicy, ClairvoyantPolicy, MNLBanditPolicy,
                             OptimalPolicy, TTPSPolicy)
from seqexp.presets import (build_diffusion_policies, fixed_payoff_instance_for_launches,
                            table5_market, ttps_arms)
from seqexp.sim import (MetricTable, SimConfig, SimulationError, TimeModel,
                        cumulative_regret, mean_clairvoyant_reward,
                        optimality_gap, relative_error_integral, run_policy,
                        terminal_regret, trajectories_to_csv, value_of_stopping)
from seqexp.solver import BudgetMode, policy_value, solve


@pytest.fixture(scope="module")
def ex1_optimal(example1, grid3):
    vf, _ = solve(example1, grid3, 1e-6)
    return OptimalPolicy(example1, vf), vf


def test_run_policy_always_stop(example1):
    recs = run_policy(example1, AlwaysStopPolicy(example1), 0.3,
                      SimConfig(seed=1, replications=3))
    for r in recs:
        assert r.stop_votes == 0 and r.stop_time == 0.0
        assert r.discounted_reward_belief == pytest.approx(float(example1.payoff(0.3)))


def test_run_policy_absorbing_belief(example1, ex1_optimal):
    pol, _ = ex1_optimal
    recs = run_policy(example1, pol, 1.0, SimConfig(seed=2, replications=3,
                                                    record_events=True))
    for r in recs:
        assert r.theta is Hypothesis.THETA0
        assert r.terminal_belief == 1.0


def test_run_policy_matches_dp_value(example1, ex1_optimal):
    pol, vf = ex1_optimal
    for d0 in (0.2, 0.5, 0.65):
        recs = run_policy(example1, pol, d0, SimConfig(seed=11, replications=3000))
        vals = np.array([r.discounted_reward_belief for r in recs])
        se = vals.std(ddof=1) / math.sqrt(len(vals))
        assert abs(vals.mean() - vf(d0)) < 3 * max(se, 1e-9)


def test_run_policy_true_reward_same_mean(example1, ex1_optimal):
    pol, vf = ex1_optimal
    recs = run_policy(example1, pol, 0.5, SimConfig(seed=13, replications=4000))
    vals = np.array([r.discounted_reward_true for r in recs])
    se = vals.std(ddof=1) / math.sqrt(len(vals))
    assert abs(vals.mean() - vf(0.5)) < 3 * se


def test_time_model_equivalence(example1, ex1_optimal):
    pol, _ = ex1_optimal
    a = run_policy(example1, pol, 0.5, SimConfig(seed=5, replications=3000))
    b = run_policy(example1, pol, 0.5,
                   SimConfig(seed=6, replications=3000,
                             time_model=TimeModel.POISSON_GAPS))
    va = np.array([r.discounted_reward_belief for r in a])
    vb = np.array([r.discounted_reward_belief for r in b])
    se = math.hypot(va.std(ddof=1) / math.sqrt(len(va)),
                    vb.std(ddof=1) / math.sqrt(len(vb)))
    assert abs(va.mean() - vb.mean()) < 3 * se


def test_belief_martingale_along_runs(example1, ex1_optimal):
    # the belief stopped at the policy's decision time stays a martingale;
    # conditioning on still-running trajectories would bias the mean
    pol, _ = ex1_optimal
    cfg = SimConfig(seed=17, replications=3000, horizon_votes=3, record_events=True)
    recs = run_policy(example1, pol, 0.5, cfg)
    for t in range(1, 4):
        beliefs = [r.events[t - 1][4] if len(r.events) >= t else r.terminal_belief
                   for r in recs]
        arr = np.array(beliefs)
        se = arr.std(ddof=1) / math.sqrt(len(arr))
        assert abs(arr.mean() - 0.5) < 3 * se


def test_run_policy_reproducible_and_parallel(example1, ex1_optimal):
    pol, _ = ex1_optimal
    a = run_policy(example1, pol, 0.5, SimConfig(seed=3, replications=64))
    b = run_policy(example1, pol, 0.5, SimConfig(seed=3, replications=64))
    c = run_policy(example1, pol, 0.5, SimConfig(seed=3, replications=64, threads=2))
    for x, y in zip(a, b):
        assert x.discounted_reward_true == y.discounted_reward_true
    for x, y in zip(a, c):
        assert x.discounted_reward_true == y.discounted_reward_true


def test_run_policy_matches_literal_policy_value(example1, grid3):
    # the simulated MV policy reproduces its literal (default) evaluation
    pol = build_diffusion_policies(example1).maxvol
    pv = policy_value(example1, pol, grid3, tol=1e6)
    for d0 in (0.4, 0.55):
        recs = run_policy(example1, pol, d0, SimConfig(seed=23, replications=4000))
        vals = np.array([r.discounted_reward_belief for r in recs])
        se = vals.std(ddof=1) / math.sqrt(len(vals))
        assert abs(vals.mean() - pv(d0)) < 3 * max(se, 1e-9)


def test_run_policy_unbounded_guard(example1):
    market = table5_market()
    inst, dmap = fixed_payoff_instance_for_launches(market)
    arms = ttps_arms(market, inst, dmap)
    never_stop = TTPSPolicy(inst, arms, beta=0.5)
    cfg = SimConfig(seed=1, replications=1, horizon_votes=None, unbounded_guard=50)
    with pytest.raises(SimulationError):
        run_policy(inst, never_stop, 0.5, cfg)


def test_trajectory_csv(tmp_path, example1, ex1_optimal):
    pol, _ = ex1_optimal
    recs = run_policy(example1, pol, 0.5,
                      SimConfig(seed=4, replications=2, record_events=True))
    path = tmp_path / "traj.csv"
    trajectories_to_csv(recs, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "rep,time,belief_before,decision,outcome,belief_after"
    assert sum("stop:" in ln for ln in lines) == 2


def test_optimality_gap_optimal_is_tiny(example1, grid3, ex1_optimal):
    pol, vf = ex1_optimal
    gap = optimality_gap(example1, pol, grid3, tol=1e-6, optimal_vf=vf)
    assert gap <= 2e-6


def test_optimality_gap_mv(example1, grid3):
    pol = build_diffusion_policies(example1).maxvol
    gap = optimality_gap(example1, pol, grid3, tol=1e-6)
    assert 0.0 <= gap < 0.5


def test_relative_error_self_is_zero(example1, grid3):
    pol = build_diffusion_policies(example1).maxvol
    err = relative_error_integral(example1, pol, pol, grid3)
    assert err == pytest.approx(0.0, abs=1e-12)


def test_value_of_stopping_zero_budget(example1, grid3):
    pol = build_diffusion_policies(example1).maxvol
    pv = policy_value(example1, pol, grid3, tol=1e6)
    v0 = value_of_stopping(example1, pol, 0, BudgetMode.AT_MOST, grid3, policy_vf=pv)
    g = example1.payoff(grid3.nodes)
    keep = pv.values > 1e-12
    expect = ((pv.values - g) / pv.values)[keep].max()
    assert v0 == pytest.approx(expect, abs=1e-12)
    v_large = value_of_stopping(example1, pol, 400, BudgetMode.AT_MOST, grid3, policy_vf=pv)
    assert v_large <= v0


def test_metric_table_roundtrip(tmp_path):
    t = MetricTable()
    row = t.add_samples("gap", "MV", 10, [0.1, 0.2, 0.3])
    assert row.mean == pytest.approx(0.2)
    assert row.stderr == pytest.approx(row.stdev / math.sqrt(3))
    path = tmp_path / "m.csv"
    t.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "metric,policy,param,mean,max,stdev,stderr"
    assert t.get("gap", "MV", 10).max == pytest.approx(0.3)


# ---------------------------------------------------------------------------
# regret experiments
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def regret_setup():
    market = table5_market()
    inst, dmap = fixed_payoff_instance_for_launches(market)
    pol = build_diffusion_policies(inst)
    return market, inst, dmap, pol


def test_terminal_regret_zero_budget(regret_setup):
    market, inst, dmap, pol = regret_setup
    cfg = SimConfig(seed=9, replications=400)
    mean, se = terminal_regret(market, pol.maxvol, 0, cfg, dmap)
    # with no votes the prior-optimal action is launched
    from seqexp.sim import _launch_payoffs, _clairvoyant_reward, _argmax_action
    payoffs = _launch_payoffs(market)
    a = _argmax_action(payoffs, 0.5)
    expect = 0.5 * sum(
        _clairvoyant_reward(payoffs, th) - a.reward(th)
        for th in (Hypothesis.THETA0, Hypothesis.THETA1)
    )
    assert abs(mean - expect) < 3 * max(se, 1e-12)


def test_terminal_regret_clairvoyant_zero(regret_setup):
    market, inst, dmap, _ = regret_setup
    mean, se = terminal_regret(market, ClairvoyantPolicy(inst), 50,
                               SimConfig(seed=10, replications=50), dmap)
    assert mean == 0.0 and se == 0.0


def test_terminal_regret_mv_improves_with_votes(regret_setup):
    market, inst, dmap, pol = regret_setup
    cfg = SimConfig(seed=12, replications=200)
    m0, _ = terminal_regret(market, pol.maxvol, 0, cfg, dmap)
    m4, _ = terminal_regret(market, pol.maxvol, 10_000, cfg, dmap)
    assert m4 < m0
    clair = mean_clairvoyant_reward(market, cfg)
    assert m4 <= 0.01 * clair


def test_cumulative_regret_clairvoyant_zero(regret_setup):
    market, inst, dmap, _ = regret_setup
    mean, se = cumulative_regret(market, ClairvoyantPolicy(inst), 100,
                                 SimConfig(seed=14, replications=20), dmap)
    assert mean == pytest.approx(0.0, abs=1e-12)


def test_cumulative_regret_bandit_sublinear(regret_setup):
    market, inst, dmap, _ = regret_setup
    cfg = SimConfig(seed=15, replications=60)
    per_vote = []
    for T in (100, 1000):
        bandit = MNLBanditPolicy([p.id for p in market.products],
                                 [p.margin for p in market.products], horizon=T)
        mean, _ = cumulative_regret(market, bandit, T, cfg, dmap)
        per_vote.append(mean)
    assert per_vote[1] < per_vote[0]


def test_cumulative_regret_mv_nondecreasing_after_stop(regret_setup):
    market, inst, dmap, pol = regret_setup
    cfg = SimConfig(seed=16, replications=60)
    m3, _ = cumulative_regret(market, pol.maxvol, 1000, cfg, dmap)
    m4, _ = cumulative_regret(market, pol.maxvol, 10_000, cfg, dmap)
    assert m4 >= m3 - 1e-9
