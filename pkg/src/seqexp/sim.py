"""Seeded Monte-Carlo simulation of the vote process and the metric
computations behind the numerical experiments.

Reproducibility scheme: the root seed feeds numpy SeedSequence(seed),
and replication i uses the child sequence spawn_key=(i,), so serial and
parallel runs draw identical streams.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .model import ActionPayoff, Experiment, Hypothesis, Instance, ModelError
from .mnl import MnlMarket, all_displays, choice_probs, sales_payoff, vote_revenue
from .policies import ClairvoyantPolicy, MNLBanditPolicy, Stop
from .solver import (BeliefGrid, BudgetMode, ValueFunction, finite_budget_curve,
                     finite_budget_value, policy_value, solve)


class SimulationError(RuntimeError):
    pass


class TimeModel(Enum):
    POISSON_GAPS = "poisson"
    UNIT_GAPS = "unit"


@dataclass(frozen=True)
class SimConfig:
    seed: int
    replications: int = 1
    horizon_votes: int | None = None
    time_model: TimeModel = TimeModel.UNIT_GAPS
    record_events: bool = False
    threads: int = 1
    unbounded_guard: int = 5_000_000

    def __post_init__(self):
        if self.replications < 1:
            raise ModelError("replications must be at least 1")


def rep_rng(seed: int, rep: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(rep,)))


@dataclass
class TrajectoryRecord:
    theta: Hypothesis
    stop_votes: int
    stop_time: float
    terminal_action: int
    discounted_reward_belief: float
    discounted_reward_true: float
    terminal_belief: float
    events: list = field(default_factory=list)


@dataclass(frozen=True)
class MetricRow:
    metric: str
    policy: str
    param: float
    mean: float
    max: float
    stdev: float
    stderr: float


@dataclass
class MetricTable:
    rows: list = field(default_factory=list)

    def add_samples(self, metric: str, policy: str, param, samples) -> MetricRow:
        x = np.asarray(samples, dtype=float)
        n = len(x)
        sd = float(x.std(ddof=1)) if n > 1 else 0.0
        row = MetricRow(metric=metric, policy=policy, param=float(param),
                        mean=float(x.mean()), max=float(x.max()),
                        stdev=sd, stderr=sd / math.sqrt(n))
        self.rows.append(row)
        return row

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("metric,policy,param,mean,max,stdev,stderr\n")
            for r in self.rows:
                fh.write(
                    f"{r.metric},{r.policy},{r.param:.12g},{r.mean:.12g},"
                    f"{r.max:.12g},{r.stdev:.12g},{r.stderr:.12g}\n"
                )

    def get(self, metric: str, policy: str, param=None) -> MetricRow:
        for r in self.rows:
            if r.metric == metric and r.policy == policy:
                if param is None or r.param == float(param):
                    return r
        raise KeyError((metric, policy, param))


def _parallel_map(fn, jobs, threads: int):
    if threads <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, jobs))


class _OutcomeSampler:
    """Cumulative outcome laws of an experiment under the true hypothesis."""

    def __init__(self, e: Experiment):
        self.e = e
        self.cum0 = np.cumsum(e.q0)
        self.cum1 = np.cumsum(e.q1)
        self.lr = e.ratios

    def draw(self, theta: Hypothesis, rng) -> int:
        cum = self.cum0 if theta is Hypothesis.THETA0 else self.cum1
        return int(np.searchsorted(cum, rng.random()))


def _simulate_rep(inst: Instance, policy, delta0: float, cfg: SimConfig,
                  rep: int) -> TrajectoryRecord:
    rng = rep_rng(cfg.seed, rep)
    theta = Hypothesis.THETA0 if rng.random() < delta0 else Hypothesis.THETA1
    samplers = {}
    delta = float(delta0)
    t = 0.0
    votes = 0
    events = []
    horizon = cfg.horizon_votes
    guard = cfg.unbounded_guard
    while True:
        decision = policy.decide(delta, rng)
        if isinstance(decision, Stop):
            action = inst.action_by_id(decision.action_id)
            break
        if horizon is not None and votes >= horizon:
            action = inst.best_action(delta)
            break
        if votes >= guard:
            raise SimulationError(
                f"replication {rep}: no stop after {votes} votes "
                f"(theta={theta.name}, belief={delta:.6g})"
            )
        e = decision.experiment
        s = samplers.get(e.id)
        if s is None:
            s = samplers[e.id] = _OutcomeSampler(e)
        if cfg.time_model is TimeModel.POISSON_GAPS:
            t += rng.exponential(1.0 / inst.lam)
        else:
            t += 1.0
        xi = s.draw(theta, rng)
        before = delta
        lr = s.lr[xi]
        delta = delta / (delta + (1.0 - delta) * lr) if 0.0 < delta < 1.0 else delta
        votes += 1
        if cfg.record_events:
            events.append((t, before, e.id, e.outcomes[xi], delta))
    if cfg.time_model is TimeModel.POISSON_GAPS:
        disc = math.exp(-inst.r * t)
        stop_time = t
    else:
        disc = inst.rho ** votes
        stop_time = float(votes)
    return TrajectoryRecord(
        theta=theta,
        stop_votes=votes,
        stop_time=stop_time,
        terminal_action=action.id,
        discounted_reward_belief=disc * float(action.value(delta)),
        discounted_reward_true=disc * action.reward(theta),
        terminal_belief=delta,
        events=events,
    )


def _rep_job(args):
    inst, policy, delta0, cfg, reps = args
    return [_simulate_rep(inst, policy, delta0, cfg, r) for r in reps]


def run_policy(inst: Instance, policy, delta0: float, cfg: SimConfig):
    """Simulate seeded vote trajectories under the policy.

    Per replication the true hypothesis is drawn from the prior, outcomes
    follow its law, and the policy decides at every epoch. UNIT_GAPS
    discounts per vote by lam/(lam+r), which has the same expectation as
    exponential gaps but lower variance.
    """
    reps = list(range(cfg.replications))
    if cfg.threads <= 1:
        return [_simulate_rep(inst, policy, delta0, cfg, r) for r in reps]
    chunks = np.array_split(np.array(reps), cfg.threads * 4)
    jobs = [(inst, policy, delta0, cfg, [int(r) for r in c]) for c in chunks if len(c)]
    out = []
    for part in _parallel_map(_rep_job, jobs, cfg.threads):
        out.extend(part)
    return out


def trajectories_to_csv(records, path) -> None:
    with open(path, "w") as fh:
        fh.write("rep,time,belief_before,decision,outcome,belief_after\n")
        for k, rec in enumerate(records):
            for (t, before, eid, outcome, after) in rec.events:
                fh.write(f"{k},{t:.12g},{before:.12g},{eid},{outcome},{after:.12g}\n")
            fh.write(
                f"{k},{rec.stop_time:.12g},{rec.terminal_belief:.12g},"
                f"stop:{rec.terminal_action},,{rec.terminal_belief:.12g}\n"
            )


# ---------------------------------------------------------------------------
# Exact (DP-based) policy metrics
# ---------------------------------------------------------------------------

def _valid_nodes(values: np.ndarray) -> np.ndarray:
    if np.any(values < -1e-12):
        raise ModelError("reference value function takes negative values")
    return values > 1e-12


def optimality_gap(inst: Instance, policy, grid: BeliefGrid | None = None,
                   tol: float = 1e-3, optimal_vf: ValueFunction | None = None,
                   optional_stopping: bool = True) -> float:
    """Worst relative shortfall of the policy value against the optimum.

    Both value functions come from exact dynamic programming on the grid;
    the policy keeps the option to stop early wherever that beats its own
    continuation. Interior nodes with near-zero optimal value are skipped.
    """
    if grid is None:
        grid = BeliefGrid()
    if optimal_vf is None:
        optimal_vf, _ = solve(inst, grid, tol)
    pv = policy_value(inst, policy, grid, tol=max(tol, 1e-3) * 100,
                      optional_stopping=optional_stopping)
    keep = _valid_nodes(optimal_vf.values)
    keep[0] = keep[-1] = False
    gap = (optimal_vf.values[keep] - pv.values[keep]) / optimal_vf.values[keep]
    return float(gap.max())


def relative_error_integral(inst: Instance, p_ref, p, grid: BeliefGrid | None = None,
                            tol: float = 1e-3, ref_vf: ValueFunction | None = None,
                            vf: ValueFunction | None = None,
                            optional_stopping: bool = True) -> float:
    """Integral over beliefs of the relative value shortfall against p_ref."""
    if grid is None:
        grid = BeliefGrid()
    if ref_vf is None:
        ref_vf = policy_value(inst, p_ref, grid, tol=100 * tol,
                              optional_stopping=optional_stopping)
    if vf is None:
        vf = policy_value(inst, p, grid, tol=100 * tol,
                          optional_stopping=optional_stopping)
    keep = _valid_nodes(ref_vf.values)
    integrand = np.zeros(grid.n_nodes)
    integrand[keep] = (ref_vf.values[keep] - vf.values[keep]) / ref_vf.values[keep]
    return float(np.trapezoid(integrand, grid.nodes))


def value_of_stopping(inst: Instance, policy, T: int,
                      mode: BudgetMode = BudgetMode.AT_MOST,
                      grid: BeliefGrid | None = None,
                      policy_vf: ValueFunction | None = None) -> float:
    """Worst relative loss from replacing free stopping with a T-vote budget."""
    if grid is None:
        grid = BeliefGrid()
    if policy_vf is None:
        policy_vf = policy_value(inst, policy, grid, tol=1e-1,
                                 optional_stopping=True)
    budget = finite_budget_value(inst, policy, T, grid, mode)
    keep = _valid_nodes(policy_vf.values)
    short = (policy_vf.values[keep] - budget.values[keep]) / policy_vf.values[keep]
    return float(short.max())


def value_of_stopping_curve(inst: Instance, policy, Ts, mode: BudgetMode,
                            grid: BeliefGrid | None = None,
                            policy_vf: ValueFunction | None = None) -> dict:
    if grid is None:
        grid = BeliefGrid()
    if policy_vf is None:
        policy_vf = policy_value(inst, policy, grid, tol=1e-1,
                                 optional_stopping=True)
    curves = finite_budget_curve(inst, policy, Ts, grid, mode)
    keep = _valid_nodes(policy_vf.values)
    out = {}
    for T, vf in curves.items():
        short = (policy_vf.values[keep] - vf.values[keep]) / policy_vf.values[keep]
        out[T] = float(short.max())
    return out


# ---------------------------------------------------------------------------
# Regret experiments on a crowdvoting market
# ---------------------------------------------------------------------------

def _launch_payoffs(market: MnlMarket, discard_payoff: float = 0.0) -> dict:
    """Per-action true payoffs, including launches pruned from instances."""
    out = {0: ActionPayoff(id=0, alpha=discard_payoff, beta=0.0)}
    for p in market.products:
        out[p.id] = sales_payoff(market, [p.id])
    return out


def _clairvoyant_reward(payoffs: dict, theta: Hypothesis) -> float:
    return max(a.reward(theta) for a in payoffs.values())


def _argmax_action(payoffs: dict, delta: float) -> ActionPayoff:
    best = max(float(a.value(delta)) for a in payoffs.values())
    ids = [i for i, a in payoffs.items() if float(a.value(delta)) >= best - 1e-12]
    return payoffs[min(ids)]


class _DisplaySampler:
    """Cumulative MNL choice laws per display and hypothesis."""

    def __init__(self, market: MnlMarket):
        self.market = market
        self._cache = {}

    def entry(self, display: frozenset):
        key = display
        hit = self._cache.get(key)
        if hit is None:
            ids = tuple(sorted(display))
            c0 = np.cumsum(choice_probs(self.market, ids, Hypothesis.THETA0))
            c1 = np.cumsum(choice_probs(self.market, ids, Hypothesis.THETA1))
            q0 = choice_probs(self.market, ids, Hypothesis.THETA0)
            q1 = choice_probs(self.market, ids, Hypothesis.THETA1)
            lr = q1 / q0
            rev0 = vote_revenue(self.market, ids, Hypothesis.THETA0)
            rev1 = vote_revenue(self.market, ids, Hypothesis.THETA1)
            hit = self._cache[key] = (ids, c0, c1, lr, rev0, rev1)
        return hit

    def draw(self, display: frozenset, theta: Hypothesis, rng):
        ids, c0, c1, lr, _, _ = self.entry(display)
        cum = c0 if theta is Hypothesis.THETA0 else c1
        k = int(np.searchsorted(cum, rng.random()))
        return ids[k], float(lr[k])

    def revenue(self, display: frozenset, theta: Hypothesis) -> float:
        entry = self.entry(display)
        return entry[4] if theta is Hypothesis.THETA0 else entry[5]


def _best_revenue_rate(market: MnlMarket, theta: Hypothesis) -> float:
    return max(vote_revenue(market, sorted(d), theta) for d in all_displays(market))


def _regret_rep(args):
    (market, policy, T, cfg, payoffs, display_map, rep, want_path) = args
    rng = rep_rng(cfg.seed, rep)
    theta = Hypothesis.THETA0 if rng.random() < 0.5 else Hypothesis.THETA1
    sampler = _DisplaySampler(market)
    clair = _clairvoyant_reward(payoffs, theta)
    clair_rate = _best_revenue_rate(market, theta)
    rev_sum = 0.0
    path = [] if want_path else None

    if isinstance(policy, MNLBanditPolicy):
        policy.reset(rng)
        for t in range(T):
            disp = policy.current_display()
            outcome, _ = sampler.draw(disp, theta, rng)
            rev_sum += sampler.revenue(disp, theta)
            policy.observe(outcome)
            if want_path:
                path.append(clair_rate * (t + 1) - rev_sum)
        action = payoffs[policy.terminal_action_id()]
    elif isinstance(policy, ClairvoyantPolicy):
        action = max(payoffs.values(), key=lambda a: (a.reward(theta), -a.id))
        rev_sum = clair_rate * T
        if want_path:
            path = [0.0] * T
    else:
        delta = 0.5
        action = None
        votes = 0
        while votes < T:
            decision = policy.decide(delta, rng)
            if isinstance(decision, Stop):
                action = payoffs.get(decision.action_id) or _argmax_action(payoffs, delta)
                break
            e = decision.experiment
            disp = display_map[e.id] if display_map else frozenset(e.outcomes)
            outcome, lr = sampler.draw(disp, theta, rng)
            rev_sum += sampler.revenue(disp, theta)
            if 0.0 < delta < 1.0:
                delta = delta / (delta + (1.0 - delta) * lr)
            votes += 1
            if want_path:
                path.append(clair_rate * votes - rev_sum)
        if action is None:
            action = _argmax_action(payoffs, delta)
        if want_path and votes < T:
            # frozen decision: remaining votes pass unused
            last = path[-1] if path else 0.0
            for k in range(votes, T):
                last += clair_rate
                path.append(last)

    terminal = clair - action.reward(theta)
    cumulative = clair_rate * T - rev_sum
    return terminal, cumulative, path, clair


def _regret_samples(market: MnlMarket, policy, T: int, cfg: SimConfig,
                    display_map=None, want_path: bool = False):
    payoffs = _launch_payoffs(market)
    jobs = [(market, policy, T, cfg, payoffs, display_map, rep, want_path)
            for rep in range(cfg.replications)]
    return _parallel_map(_regret_rep, jobs, cfg.threads)


def terminal_regret(market: MnlMarket, policy, T: int, cfg: SimConfig,
                    display_map=None) -> tuple[float, float]:
    """Mean and standard error of the terminal launch regret after T votes.

    The true hypothesis is drawn from the uniform prior; belief policies
    that stop early freeze their decision and let the remaining votes pass.
    """
    out = _regret_samples(market, policy, T, cfg, display_map)
    terms = np.array([o[0] for o in out])
    n = len(terms)
    sd = terms.std(ddof=1) if n > 1 else 0.0
    return float(terms.mean()), float(sd / math.sqrt(n))


def cumulative_regret(market: MnlMarket, policy, T: int, cfg: SimConfig,
                      display_map=None) -> tuple[float, float]:
    """Per-vote mean cumulative revenue regret over T votes."""
    out = _regret_samples(market, policy, T, cfg, display_map)
    per_vote = np.array([o[1] / T for o in out])
    n = len(per_vote)
    sd = per_vote.std(ddof=1) if n > 1 else 0.0
    return float(per_vote.mean()), float(sd / math.sqrt(n))


def mean_clairvoyant_reward(market: MnlMarket, cfg: SimConfig) -> float:
    """Prior-mean clairvoyant launch reward (uniform over hypotheses)."""
    payoffs = _launch_payoffs(market)
    return 0.5 * (_clairvoyant_reward(payoffs, Hypothesis.THETA0)
                  + _clairvoyant_reward(payoffs, Hypothesis.THETA1))
