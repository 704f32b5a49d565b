"""Canonical instances and named experiment recipes.

Each ``run_*`` function reproduces one numerical study at desk scale and
returns a MetricTable (plus auxiliary data); the CLI maps preset names to
these functions and writes the CSV artifacts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .diffusion import (AsymptoticExperiment, DiffusionModel, DiffusionValue,
                        calibrate_kernel, compose_value, select_max_vol)
from .model import ActionPayoff, Experiment, Instance
from .mnl import (MnlMarket, MnlProduct, fixed_payoff_instance, interval_displays,
                  np_scaling, random_market)
from .policies import (AsymptoticPolicy, FullDisplayPolicy, LookAheadPolicy,
                       MaxRangePolicy, MaxVolPolicy, MNLBanditPolicy,
                       TTPSPolicy)
from .sim import (MetricRow, MetricTable, SimConfig, cumulative_regret,
                  mean_clairvoyant_reward, optimality_gap,
                  relative_error_integral, terminal_regret,
                  value_of_stopping_curve)
from .solver import BeliefGrid, BudgetMode, policy_value, solve

FIG1_ACTIONS = (
    ActionPayoff(id=1, alpha=6.0, beta=-30.0),
    ActionPayoff(id=2, alpha=4.0, beta=-5.0),
    ActionPayoff(id=3, alpha=0.0, beta=3.0),
    ActionPayoff(id=4, alpha=-20.0, beta=25.0),
)

# probability of outcome 0 for the nine binary experiments
_TABLE1_Q0 = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
_TABLE1_Q1 = (0.03, 0.04, 0.09, 0.16, 0.25, 0.36, 0.49, 0.68, 0.86)

# limiting kernel and alternative-hypothesis scores of experiments 2..7
_EX2_KERNEL0 = (0.2, 0.3, 0.4, 0.5, 0.6, 0.7)
_EX2_ALPHA0 = (-0.8, -0.7, -0.6, -0.5, -0.4, -0.3)


def table1_experiments() -> tuple:
    out = []
    for k, (a, b) in enumerate(zip(_TABLE1_Q0, _TABLE1_Q1), start=1):
        out.append(Experiment(id=k, outcomes=(0, 1),
                              q0=np.array([a, 1.0 - a]),
                              q1=np.array([b, 1.0 - b])))
    return tuple(out)


def example1_instance() -> Instance:
    return Instance(actions=FIG1_ACTIONS, experiments=table1_experiments(),
                    lam=8.0, r=0.5)


def example2_asymptotics() -> tuple:
    """Analytic limit data of experiments 2..7 (scores per unit rate)."""
    out = []
    for k, (q, a) in enumerate(zip(_EX2_KERNEL0, _EX2_ALPHA0), start=2):
        a_other = -a * q / (1.0 - q)
        out.append(AsymptoticExperiment(
            experiment_id=k,
            kernel=np.array([q, 1.0 - q]),
            alpha0=np.zeros(2),
            alpha1=np.array([a, a_other]),
            rate_scaled=False,
        ))
    return tuple(out)


def example2_instance(k: float) -> Instance:
    """Scaled family around Example 1 without the dominated experiments."""
    root = math.sqrt(k)
    exps = []
    for eid, (q, a) in enumerate(zip(_EX2_KERNEL0, _EX2_ALPHA0), start=2):
        a_other = -a * q / (1.0 - q)
        q0 = np.array([q, 1.0 - q])
        q1 = np.array([q * (1.0 + a / root), (1.0 - q) * (1.0 + a_other / root)])
        exps.append(Experiment(id=eid, outcomes=(0, 1), q0=q0, q1=q1))
    return Instance(actions=FIG1_ACTIONS, experiments=tuple(exps),
                    lam=8.0 * k, r=0.5)


def fig4_model() -> DiffusionModel:
    return DiffusionModel(sigma2=4.0, r=1.0, selected_experiment=-1)


def fig4_instance() -> Instance:
    # any informative experiment will do; only the actions matter here
    return Instance(actions=FIG1_ACTIONS, experiments=table1_experiments()[:1],
                    lam=8.0, r=1.0)


def table5_market(r: float = 1e-4) -> MnlMarket:
    """Five-product launch market with attraction scores and unit margins.

    The sales-to-discount scale is 1 so launch payoffs equal margin times
    purchase probability; the discount rate only shapes the stopping
    thresholds of the voting phase.
    """
    v0 = (0.05, 0.08, 0.012, 0.05, 0.04)
    v1 = (0.032, 0.07, 0.018, 0.12, 0.043)
    margins = (210.0, 121.5, 506.0, 42.0, 208.0)
    prods = tuple(
        MnlProduct(id=i + 1, u0=math.log(a), u1=math.log(b), price=m)
        for i, (a, b, m) in enumerate(zip(v0, v1, margins))
    )
    return MnlMarket(products=prods, mu=1.0, lambda_v=1.0, lambda_s=r, r=r)


@dataclass
class DiffusionPolicySet:
    model: DiffusionModel
    dv: DiffusionValue
    asymptotic: AsymptoticPolicy
    maxvol: MaxVolPolicy
    maxrange: MaxRangePolicy | None


def build_diffusion_policies(inst: Instance, interval_candidates=None,
                             want_maxrange: bool = False) -> DiffusionPolicySet:
    """Calibrate, pick the volatility maximizer, and compose the policies."""
    asyms = [calibrate_kernel(e, inst.lam) for e in inst.experiments]
    winner_id, vol = select_max_vol(asyms)
    model = DiffusionModel(sigma2=vol, r=inst.r, selected_experiment=winner_id)
    dv = compose_value(inst, model)
    mr = None
    if want_maxrange:
        mr = MaxRangePolicy(inst, dv, interval_candidates)
    return DiffusionPolicySet(
        model=model, dv=dv,
        asymptotic=AsymptoticPolicy(inst, dv, winner_id),
        maxvol=MaxVolPolicy(inst, dv),
        maxrange=mr,
    )


def tables2_instance(rng, k: float, n: int = 5):
    """Random noisy-preferences instance with the fixed four-line payoff."""
    market = random_market(n, rng, mu=1.0, lambda_v=1.0, lambda_s=1.0, r=0.05)
    scaled = np_scaling(market, k)
    inst, display_map = fixed_payoff_instance(scaled, FIG1_ACTIONS)
    return inst, scaled, display_map


def _interval_experiments(inst, scaled_market, display_map):
    ivals = set(interval_displays(scaled_market))
    by_display = {disp: inst.experiment_by_id(eid) for eid, disp in display_map.items()}
    return [by_display[d] for d in ivals if d in by_display]


# ---------------------------------------------------------------------------
# Preset runners
# ---------------------------------------------------------------------------

def run_example1(mesh: float = 1e-3, tol: float = 1e-3):
    inst = example1_instance()
    vf, report = solve(inst, BeliefGrid(mesh), tol)
    return inst, vf, report


def run_example2(k: float = 1e4, mesh: float = 1e-3, tol: float = 1e-3):
    asyms = example2_asymptotics()
    winner_id, vol = select_max_vol(asyms)
    inst = example2_instance(k)
    vf, report = solve(inst, BeliefGrid(mesh), tol)
    table = MetricTable()
    for a in asyms:
        table.add_samples("vol_term", f"experiment-{a.experiment_id}",
                          a.experiment_id, [a.vol_term])
    table.add_samples("max_vol_winner", f"experiment-{winner_id}", k, [vol])
    return table, inst, vf, report, winner_id


def mesh_for_scale(k: float, base: float = 1e-3) -> float:
    """Evaluation mesh fine enough to resolve the per-vote belief jumps.

    In the noisy-preferences family the jump size shrinks like 1/sqrt(k);
    the discretized chain must keep several nodes per jump or the
    interpolation bias accumulates over the lam/r effective horizon.
    """
    if k <= 100.0:
        return base
    return max(base / 10.0, base / math.sqrt(k / 100.0))


def run_tables2(n_instances: int = 100, ks=(1.0, 1e2, 1e4), seed: int = 20240801,
                mesh: float = 1e-3, tol: float = 1e-3, progress=None) -> MetricTable:
    """Optimality gaps of the A and MV policies over a random ensemble."""
    table = MetricTable()
    gaps = {("A", k): [] for k in ks}
    gaps.update({("MV", k): [] for k in ks})
    for i in range(n_instances):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(i,)))
        market = random_market(5, rng, mu=1.0, lambda_v=1.0, lambda_s=1.0, r=0.05)
        for k in ks:
            scaled = np_scaling(market, k)
            inst, _ = fixed_payoff_instance(scaled, FIG1_ACTIONS)
            grid = BeliefGrid(mesh_for_scale(k, mesh))
            pol = build_diffusion_policies(inst)
            opt_vf, _ = solve(inst, grid, tol)
            for name, policy in (("A", pol.asymptotic), ("MV", pol.maxvol)):
                gaps[(name, k)].append(
                    optimality_gap(inst, policy, grid, tol, optimal_vf=opt_vf))
        if progress:
            progress(i + 1, n_instances)
    for (name, k), vals in gaps.items():
        table.add_samples("optimality_gap", name, k, vals)
    return table


def run_benchmarks(n_instances: int = 100, seed: int = 20240802, n: int = 10,
                   mesh: float = 1e-3, tol: float = 1e-3, progress=None) -> MetricTable:
    """Integrated relative errors of MR, LA, F against MV."""
    grid = BeliefGrid(mesh)
    errs = {"MR": [], "LA": [], "F": []}
    for i in range(n_instances):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(i,)))
        market = random_market(n, rng, mu=1.0, lambda_v=2.0, lambda_s=1.0, r=0.05)
        inst, display_map = fixed_payoff_instance(market, FIG1_ACTIONS)
        ivals = _interval_experiments(inst, market, display_map)
        pol = build_diffusion_policies(inst, interval_candidates=ivals,
                                       want_maxrange=True)
        full_exp = max(inst.experiments, key=lambda e: e.n_outcomes)
        ref_vf = policy_value(inst, pol.maxvol, grid, tol=100 * tol,
                              optional_stopping=True)
        comparisons = {
            "MR": pol.maxrange,
            "LA": LookAheadPolicy(inst),
            "F": FullDisplayPolicy(inst, full_exp, grid),
        }
        for name, policy in comparisons.items():
            errs[name].append(
                relative_error_integral(inst, pol.maxvol, policy, grid,
                                        tol, ref_vf=ref_vf))
        if progress:
            progress(i + 1, n_instances)
    table = MetricTable()
    for name, vals in errs.items():
        table.add_samples("relative_error_integral", name, 0, vals)
    return table


def run_stopping_value(n_instances: int = 100, seed: int = 20240803,
                       Ts=(5, 10, 20, 40, 60, 80, 120, 200), scale: float = 10.0,
                       mesh: float = 1e-3, tol: float = 1e-3,
                       progress=None) -> MetricTable:
    """Value of optimal stopping against exact and capped vote budgets.

    The default noise scale balances per-vote informativeness against the
    per-vote discount so both branches of the exact-budget tradeoff are
    visible on the budget grid: too few votes starve the decision of
    information, too many waste time.
    """
    grid = BeliefGrid(mesh)
    curves = {("exactly", t): [] for t in Ts}
    curves.update({("at_most", t): [] for t in Ts})
    for i in range(n_instances):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(i,)))
        market = random_market(5, rng, mu=1.0, lambda_v=2.0, lambda_s=1.0, r=0.05)
        inst, _ = fixed_payoff_instance(np_scaling(market, scale), FIG1_ACTIONS)
        pol = build_diffusion_policies(inst)
        mv = pol.maxvol
        pv = policy_value(inst, mv, grid, tol=100 * tol, optional_stopping=True)
        for mode, key in ((BudgetMode.EXACTLY, "exactly"), (BudgetMode.AT_MOST, "at_most")):
            vals = value_of_stopping_curve(inst, mv, Ts, mode, grid, policy_vf=pv)
            for t, v in vals.items():
                curves[(key, t)].append(v)
        if progress:
            progress(i + 1, n_instances)
    table = MetricTable()
    for (key, t), vals in curves.items():
        table.add_samples(f"value_of_stopping_{key}", "MV", t, vals)
    return table


def run_regret(Ts=(100, 1000, 10000), replications: int = 500,
               seed: int = 20240804, policies=("MV", "TTPS", "MNL-bandit"),
               r: float = 1e-4, threads: int = 1, progress=None):
    """Terminal and cumulative regret on the five-product launch market."""
    market = table5_market(r=r)
    inst, display_map = fixed_payoff_instance_for_launches(market)
    pol = build_diffusion_policies(inst)
    arms = ttps_arms(market, inst, display_map)
    table = MetricTable()
    clair = mean_clairvoyant_reward(market, SimConfig(seed=seed))
    table.add_samples("clairvoyant_reward", "clairvoyant", 0, [clair])
    for T in Ts:
        cfg = SimConfig(seed=seed + T, replications=replications, threads=threads)
        for name in policies:
            if name == "MV":
                policy = pol.maxvol
            elif name == "TTPS":
                policy = TTPSPolicy(inst, arms, beta=0.5)
            elif name == "MNL-bandit":
                policy = MNLBanditPolicy(
                    product_ids=[p.id for p in market.products],
                    margins=[p.margin for p in market.products],
                    horizon=T,
                )
            else:
                raise ValueError(f"unknown policy {name}")
            tmean, tse = terminal_regret(market, policy, T, cfg, display_map)
            cmean, cse = cumulative_regret(market, policy, T, cfg, display_map)
            table.rows.append(MetricRow(
                metric="terminal_regret", policy=name, param=float(T),
                mean=tmean, max=tmean, stdev=tse * math.sqrt(replications),
                stderr=tse,
            ))
            table.rows.append(MetricRow(
                metric="cumulative_regret_per_vote", policy=name, param=float(T),
                mean=cmean, max=cmean, stdev=cse * math.sqrt(replications),
                stderr=cse,
            ))
            if progress:
                progress(name, T)
    return table, market, pol


def fixed_payoff_instance_for_launches(market: MnlMarket):
    from .mnl import singleton_launch_instance
    return singleton_launch_instance(market)


def ttps_arms(market: MnlMarket, inst: Instance, display_map: dict):
    """Singleton-display arms paired with their launch payoffs."""
    from .mnl import sales_payoff
    by_display = {disp: eid for eid, disp in display_map.items()}
    arms = []
    for p in market.products:
        disp = frozenset([0, p.id])
        eid = by_display.get(disp)
        if eid is None:
            continue
        arms.append((inst.experiment_by_id(eid), sales_payoff(market, [p.id])))
    return arms
