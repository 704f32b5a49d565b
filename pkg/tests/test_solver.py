import numpy as np
import pytest

from seqexp.model import ActionPayoff, Experiment, Instance
from seqexp.policies import AlwaysStopPolicy, OptimalPolicy
from seqexp.presets import FIG1_ACTIONS, build_diffusion_policies, table1_experiments
from seqexp.solver import (STOP, BeliefGrid, BudgetMode, SolverError,
                           bellman_apply, finite_budget_curve,
                           finite_budget_value, payoff_value_function,
                           policy_value, solve)

from oracles import finite_horizon_value


def test_grid_validation():
    with pytest.raises(Exception):
        BeliefGrid(0.2)
    with pytest.raises(Exception):
        BeliefGrid(0.0003)  # does not divide 1 evenly
    g = BeliefGrid(1e-2)
    assert g.n_nodes == 101
    assert g.nodes[0] == 0.0 and g.nodes[-1] == 1.0


def test_bellman_apply_improves_on_payoff(example1, grid3):
    v0 = payoff_value_function(example1, grid3)
    v1 = bellman_apply(example1, v0)
    assert np.all(v1.values >= v0.values - 1e-12)
    nodes = grid3.nodes
    mid = (nodes > 0.31) & (nodes < 0.69)
    assert np.any(v1.values[mid] > v0.values[mid] + 1e-9)


def test_bellman_lambda_zero_fixed_point():
    inst = Instance(actions=FIG1_ACTIONS, experiments=table1_experiments(),
                    lam=0.0, r=0.5)
    grid = BeliefGrid(1e-2)
    vf, report = solve(inst, grid, 1e-9)
    np.testing.assert_allclose(vf.values, inst.payoff(grid.nodes))
    assert np.all(vf.choice == STOP)


def test_huge_discount_gives_payoff():
    inst = Instance(actions=FIG1_ACTIONS, experiments=table1_experiments(),
                    lam=8.0, r=1e6)
    vf, _ = solve(inst, BeliefGrid(1e-2), 1e-6)
    np.testing.assert_allclose(vf.values, inst.payoff(vf.grid.nodes), atol=1e-4)


def test_solve_border_conditions(example1, example1_solved):
    vf, report = example1_solved
    assert vf.values[0] == pytest.approx(example1.payoff(0.0))
    assert vf.values[-1] == pytest.approx(example1.payoff(1.0))
    assert report.final_residual <= 1e-3
    assert report.wall_time > 0


def test_solve_dominates_payoff_and_sandwich(example1, example1_solved, grid3):
    vf, _ = example1_solved
    g = example1.payoff(grid3.nodes)
    assert np.all(vf.values >= g - 1e-9)
    upper = (1 - grid3.nodes) * example1.payoff(0.0) + grid3.nodes * example1.payoff(1.0)
    assert np.all(vf.values <= upper + 1e-3)


def test_solve_gauss_seidel_and_standard_agree(example1):
    grid = BeliefGrid(5e-3)
    v_gs, _ = solve(example1, grid, 1e-8, gauss_seidel=True)
    v_st, _ = solve(example1, grid, 1e-8, gauss_seidel=False)
    assert np.abs(v_gs.values - v_st.values).max() < 1e-6


def test_solve_without_acceleration_matches(example1):
    grid = BeliefGrid(1e-2)
    v_acc, _ = solve(example1, grid, 1e-8)
    v_plain, rep = solve(example1, grid, 1e-8, accelerate=False)
    assert np.abs(v_acc.values - v_plain.values).max() < 1e-6
    assert rep.iterations > 10


def test_solve_iteration_cap():
    inst = Instance(actions=FIG1_ACTIONS, experiments=table1_experiments(),
                    lam=8.0, r=0.5)
    with pytest.raises(SolverError) as exc:
        solve(inst, BeliefGrid(1e-2), 1e-12, accelerate=False, max_sweeps=10)
    assert exc.value.residual is not None


def test_mesh_refinement_stability(example1):
    v1, _ = solve(example1, BeliefGrid(1e-3), 1e-3)
    v2, _ = solve(example1, BeliefGrid(5e-4), 1e-3)
    common = v1.grid.nodes
    diff = np.abs(v2(common) - v1.values).max()
    assert diff < 5e-3


def test_convexity_of_solution(example1_solved, grid3):
    vf, _ = example1_solved
    rng = np.random.default_rng(0)
    d1 = rng.uniform(0, 1, 400)
    d2 = rng.uniform(0, 1, 400)
    t = rng.uniform(0, 1, 400)
    mid = vf(t * d1 + (1 - t) * d2)
    chord = t * vf(d1) + (1 - t) * vf(d2)
    assert np.all(mid <= chord + 1e-9)


def test_contraction_factor(example1, grid3):
    rho = example1.rho
    v = payoff_value_function(example1, grid3)
    prev = None
    for _ in range(12):
        nxt = bellman_apply(example1, v)
        d = np.abs(nxt.values - v.values).max()
        if prev is not None:
            assert d <= rho * prev + 1e-12
        prev = d
        v = nxt


def test_exact_enumeration_lower_bound():
    # two actions, one binary experiment, rho <= 0.5
    acts = (ActionPayoff(1, 1.0, -1.0), ActionPayoff(2, 0.0, 1.0))
    e = Experiment(id=1, outcomes=(0, 1), q0=np.array([0.7, 0.3]),
                   q1=np.array([0.3, 0.7]))
    inst = Instance(actions=acts, experiments=(e,), lam=1.0, r=1.0)
    assert inst.rho <= 0.5
    vf, _ = solve(inst, BeliefGrid(1e-3), 1e-9)
    for d in (0.2, 0.4, 0.5, 0.6, 0.8):
        lower = finite_horizon_value(inst, d, 12)
        assert lower <= vf(d) + 1e-9
        assert vf(d) - lower < 1e-3


def test_policy_value_always_stop(example1, grid3):
    pv = policy_value(example1, AlwaysStopPolicy(example1), grid3, tol=1e-9)
    np.testing.assert_allclose(pv.values, example1.payoff(grid3.nodes), atol=1e-12)


def test_policy_value_optimal_self_consistent(example1, grid3):
    vf, _ = solve(example1, grid3, 1e-3)
    pol = OptimalPolicy(example1, vf)
    pv = policy_value(example1, pol, grid3, tol=2e-3)
    assert np.abs(pv.values - vf.values).max() <= 2e-3


def test_policy_value_suboptimal_below(example1, grid3):
    vf, _ = solve(example1, grid3, 1e-6)
    pol = build_diffusion_policies(example1).maxvol
    pv = policy_value(example1, pol, grid3, tol=1e6)
    assert np.all(pv.values <= vf.values + 1e-6)


def test_finite_budget_modes(example1, grid3):
    pol = build_diffusion_policies(example1).maxvol
    g = example1.payoff(grid3.nodes)
    for mode in (BudgetMode.EXACTLY, BudgetMode.AT_MOST):
        v0 = finite_budget_value(example1, pol, 0, grid3, mode)
        np.testing.assert_allclose(v0.values, g, atol=1e-12)
    curves = finite_budget_curve(example1, pol, [1, 2, 5, 10, 40], grid3,
                                 BudgetMode.AT_MOST)
    prev = g
    for t in (1, 2, 5, 10, 40):
        assert np.all(curves[t].values >= prev - 1e-12)
        prev = curves[t].values


def test_finite_budget_large_t_converges_to_policy_value(example1, grid3):
    # the at-most budget takes the stop option at every stage, so its limit
    # is the optional-stopping evaluation of the same experiment rule
    pol = build_diffusion_policies(example1).maxvol
    pv = policy_value(example1, pol, grid3, tol=1e6, optional_stopping=True)
    T = int(10 * example1.lam / example1.r)
    vT = finite_budget_value(example1, pol, T, grid3, BudgetMode.AT_MOST)
    assert np.abs(vT.values - pv.values).max() < 1e-3


def test_value_function_csv(tmp_path, example1_solved):
    vf, _ = example1_solved
    path = tmp_path / "value.csv"
    vf.to_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "delta,value,choice"
    assert len(lines) == vf.grid.n_nodes + 1
    first = lines[1].split(",")
    assert first[0] == "0" and first[2] == "stop"
