"""Decision rules mapping beliefs (plus internal state for the bandit
baselines) to Stop or an experiment.

Belief-Markov policies implement ``stops``/``experiment_distribution``;
the stateful bandit keeps per-run state and is driven by the simulator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .diffusion import DiffusionValue
from .model import ActionPayoff, Experiment, Instance, ModelError
from .solver import STOP, BeliefGrid, DpStructure, ValueFunction, solve


@dataclass(frozen=True)
class Stop:
    action_id: int


@dataclass(frozen=True)
class Play:
    experiment: Experiment


class MarkovPolicy:
    """Base for stateless belief-indexed policies."""

    name = "markov"

    def stops(self, delta: float) -> bool:
        raise NotImplementedError

    def experiment_distribution(self, delta: float):
        """Total experiment rule: list of (Experiment, prob), defined everywhere."""
        raise NotImplementedError

    def decision_distribution(self, delta: float):
        if self.stops(delta):
            return None
        return self.experiment_distribution(delta)

    def stop_action(self, delta: float) -> ActionPayoff:
        return self.inst.best_action(delta)

    def decide(self, delta: float, rng=None):
        dist = self.decision_distribution(delta)
        if dist is None:
            return Stop(self.stop_action(delta).id)
        if len(dist) == 1 or rng is None:
            return Play(dist[0][0])
        probs = np.array([p for _, p in dist])
        k = rng.choice(len(dist), p=probs / probs.sum())
        return Play(dist[k][0])

    # vectorized defaults used by the DP evaluators
    def grid_decisions(self, inst: Instance, grid: BeliefGrid):
        nodes = grid.nodes
        stop = np.array([self.stops(float(d)) for d in nodes])
        rows = [None if s else self.experiment_distribution(float(d))
                for s, d in zip(stop, nodes)]
        return stop, rows

    def grid_experiments(self, inst: Instance, grid: BeliefGrid):
        return [self.experiment_distribution(float(d)) for d in grid.nodes]


class AlwaysStopPolicy(MarkovPolicy):
    name = "stop"

    def __init__(self, inst: Instance):
        self.inst = inst

    def stops(self, delta):
        return True

    def experiment_distribution(self, delta):
        return [(self.inst.experiments[0], 1.0)]


class OptimalPolicy(MarkovPolicy):
    """Greedy rule extracted from a solved value function."""

    name = "optimal"

    def __init__(self, inst: Instance, vf: ValueFunction):
        self.inst = inst
        self.vf = vf
        struct = DpStructure(inst, vf.grid)
        _, pos = struct.continuation_values(vf.values)
        self._cont_pos = pos

    @classmethod
    def from_solve(cls, inst: Instance, grid: BeliefGrid | None = None,
                   tol: float = 1e-3, **kw):
        vf, _ = solve(inst, grid, tol, **kw)
        return cls(inst, vf)

    def _node(self, delta: float) -> int:
        n = self.vf.grid.n_nodes - 1
        return int(round(min(max(delta, 0.0), 1.0) * n))

    def stops(self, delta):
        return int(self.vf.choice[self._node(delta)]) == STOP

    def experiment_distribution(self, delta):
        i = self._node(delta)
        c = int(self.vf.choice[i])
        pos = self._cont_pos[i] if c == STOP else c
        return [(self.inst.experiments[pos], 1.0)]

    def grid_decisions(self, inst, grid):
        if grid.mesh_size != self.vf.grid.mesh_size:
            return super().grid_decisions(inst, grid)
        stop = self.vf.choice == STOP
        es = self.inst.experiments
        rows = [None if s else [(es[int(c)], 1.0)]
                for s, c in zip(stop, self.vf.choice)]
        return stop, rows


class _InterventionPolicy(MarkovPolicy):
    """Shares the diffusion-composed intervention region."""

    def __init__(self, inst: Instance, dv: DiffusionValue):
        self.inst = inst
        self.dv = dv

    def stops(self, delta):
        return self.dv.in_intervention(delta)

    def _stop_mask(self, nodes):
        mask = np.zeros(len(nodes), dtype=bool)
        for k, tag in enumerate(self.dv.tags):
            if tag[0] == "stop":
                a = self.dv.breakpoints[k] - 1e-12
                b = self.dv.breakpoints[k + 1] + 1e-12
                mask |= (nodes >= a) & (nodes <= b)
        return mask


class AsymptoticPolicy(_InterventionPolicy):
    """Static experimentation with the maximum-volatility experiment."""

    name = "A"

    def __init__(self, inst: Instance, dv: DiffusionValue, winner_id: int):
        super().__init__(inst, dv)
        self.winner = inst.experiment_by_id(winner_id)

    def experiment_distribution(self, delta):
        return [(self.winner, 1.0)]

    def grid_decisions(self, inst, grid):
        nodes = grid.nodes
        stop = self._stop_mask(nodes)
        row = [(self.winner, 1.0)]
        return stop, [None if s else row for s in stop]

    def grid_experiments(self, inst, grid):
        return [[(self.winner, 1.0)]] * grid.n_nodes


def volatility_criterion(experiments, delta):
    """Instantaneous belief-variance criterion of each experiment.

    For experiment e with likelihood ratios L over outcomes distributed
    as q0 under the null: sum_x q0(x) (1 - L(x))^2 / (d + (1-d) L(x)).
    Proportional to the variance of the posterior at belief d.
    """
    delta = np.atleast_1d(np.asarray(delta, dtype=float))
    out = np.empty((len(experiments), len(delta)))
    for k, e in enumerate(experiments):
        lr = e.ratios
        out[k] = ((e.q0 * (1.0 - lr) ** 2)[None, :]
                  / (delta[:, None] + (1.0 - delta)[:, None] * lr[None, :])).sum(axis=1)
    return out


class MaxVolPolicy(_InterventionPolicy):
    """Dynamic variance-maximizing experimentation, same stop set as A."""

    name = "MV"

    def __init__(self, inst: Instance, dv: DiffusionValue,
                 candidates=None):
        super().__init__(inst, dv)
        self.candidates = tuple(candidates) if candidates is not None else inst.experiments
        # flattened (experiment, outcome) arrays so one decide is a single
        # vectorized pass; reduceat needs the per-experiment segment starts
        lens = [e.n_outcomes for e in self.candidates]
        self._starts = np.concatenate([[0], np.cumsum(lens)[:-1]]).astype(np.int64)
        self._num = np.concatenate([e.q0 * (1.0 - e.ratios) ** 2 for e in self.candidates])
        self._lr = np.concatenate([e.ratios for e in self.candidates])

    def _pick(self, delta):
        crit = np.add.reduceat(self._num / (delta + (1.0 - delta) * self._lr),
                               self._starts)
        return self.candidates[int(np.argmax(crit))]

    def experiment_distribution(self, delta):
        return [(self._pick(delta), 1.0)]

    def grid_experiments(self, inst, grid):
        crit = volatility_criterion(self.candidates, grid.nodes)
        best = crit.argmax(axis=0)
        return [[(self.candidates[int(b)], 1.0)] for b in best]

    def grid_decisions(self, inst, grid):
        stop = self._stop_mask(grid.nodes)
        rows = self.grid_experiments(inst, grid)
        return stop, [None if s else r for s, r in zip(stop, rows)]


class MaxRangePolicy(MaxVolPolicy):
    """Variance criterion restricted to the interval display family.

    Built from the candidate interval-set experiments of an MNL market;
    without them it degrades to the unrestricted rule and flags the
    fallback.
    """

    name = "MR"

    def __init__(self, inst: Instance, dv: DiffusionValue, interval_candidates=None):
        self.fell_back = interval_candidates is None
        cands = inst.experiments if self.fell_back else tuple(interval_candidates)
        super().__init__(inst, dv, candidates=cands)


class FullDisplayPolicy(MarkovPolicy):
    """Static full-display experimentation with its own optimal stop set."""

    name = "F"

    def __init__(self, inst: Instance, full_experiment: Experiment,
                 grid: BeliefGrid | None = None, tol: float = 1e-6):
        self.inst = inst
        self.full = full_experiment
        restricted = Instance(actions=inst.actions, experiments=(full_experiment,),
                              lam=inst.lam, r=inst.r)
        vf, _ = solve(restricted, grid or BeliefGrid(), tol)
        self._vf = vf

    def _node(self, delta):
        n = self._vf.grid.n_nodes - 1
        return int(round(min(max(delta, 0.0), 1.0) * n))

    def stops(self, delta):
        return int(self._vf.choice[self._node(delta)]) == STOP

    def experiment_distribution(self, delta):
        return [(self.full, 1.0)]

    def grid_decisions(self, inst, grid):
        if grid.mesh_size == self._vf.grid.mesh_size:
            stop = self._vf.choice == STOP
        else:
            stop = np.array([self.stops(float(d)) for d in grid.nodes])
        row = [(self.full, 1.0)]
        return stop, [None if s else row for s in stop]

    def grid_experiments(self, inst, grid):
        return [[(self.full, 1.0)]] * grid.n_nodes


class LookAheadPolicy(MarkovPolicy):
    """Myopic one-step rule.

    Picks the experiment maximizing the expected terminal payoff after a
    single outcome; stops when even the best one-step continuation,
    discounted, does not beat acting now. The stop test makes the induced
    stopping time finite.
    """

    name = "LA"

    def __init__(self, inst: Instance):
        self.inst = inst

    def _scores(self, delta):
        out = np.empty(len(self.inst.experiments))
        for k, e in enumerate(self.inst.experiments):
            probs = delta * e.q0 + (1.0 - delta) * e.q1
            if delta in (0.0, 1.0):
                posts = np.full(e.n_outcomes, float(delta))
            else:
                posts = delta * e.q0 / probs
            out[k] = float(probs @ self.inst.payoff(posts))
        return out

    def stops(self, delta):
        m = self._scores(delta).max()
        return self.inst.rho * m <= float(self.inst.payoff(delta))

    def experiment_distribution(self, delta):
        k = int(np.argmax(self._scores(delta)))
        return [(self.inst.experiments[k], 1.0)]

    def _grid_scores(self, inst, grid):
        struct = DpStructure(inst, grid)
        vals = np.stack([struct.expectation(struct.payoff, e)
                         for e in inst.experiments])
        return struct, vals

    def grid_decisions(self, inst, grid):
        struct, vals = self._grid_scores(inst, grid)
        best = vals.argmax(axis=0)
        stop = inst.rho * vals.max(axis=0) <= struct.payoff
        es = inst.experiments
        rows = [None if s else [(es[int(b)], 1.0)] for s, b in zip(stop, best)]
        return stop, rows

    def grid_experiments(self, inst, grid):
        _, vals = self._grid_scores(inst, grid)
        best = vals.argmax(axis=0)
        es = inst.experiments
        return [[(es[int(b)], 1.0)] for b in best]


class TTPSPolicy(MarkovPolicy):
    """Top-two sampling over candidate launch arms.

    Arms pair a display experiment with the payoff of launching the
    displayed product. At each vote the two arms with the best expected
    terminal reward under the current belief are identified and the best
    is played with probability beta, the runner-up otherwise. Never stops
    on its own; the fixed-budget experiments terminate it.
    """

    name = "TTPS"

    def __init__(self, inst: Instance, arms, beta: float = 0.5):
        if not 0.0 < beta <= 1.0:
            raise ModelError("beta must lie in (0, 1]")
        self.inst = inst
        self.arms = tuple(arms)
        self.beta = beta

    def stops(self, delta):
        return False

    def top_two(self, delta):
        rewards = [payoff.value(delta) for _, payoff in self.arms]
        order = np.argsort([-r for r in rewards], kind="stable")
        if len(self.arms) == 1:
            return self.arms[0][0], None
        return self.arms[order[0]][0], self.arms[order[1]][0]

    def experiment_distribution(self, delta):
        top, second = self.top_two(delta)
        if second is None or self.beta >= 1.0:
            return [(top, 1.0)]
        return [(top, self.beta), (second, 1.0 - self.beta)]


class ClairvoyantPolicy:
    """Oracle that knows the true hypothesis; stops immediately."""

    name = "clairvoyant"
    requires_truth = True

    def __init__(self, inst: Instance):
        self.inst = inst

    def best_reward(self, hyp) -> float:
        return max(a.reward(hyp) for a in self.inst.actions)

    def best_action(self, hyp) -> ActionPayoff:
        return max(self.inst.actions, key=lambda a: (a.reward(hyp), -a.id))


class MNLBanditPolicy:
    """Epoch-based upper-confidence assortment bandit.

    Attraction scores start at one. The current assortment maximizes
    expected revenue under the optimistic scores and is offered repeatedly
    until a no-purchase outcome closes the epoch; the per-product mean
    purchases per epoch update the estimates and radii. The terminal
    action maximizes revenue under the point estimates.
    """

    name = "MNL-bandit"
    stateful = True

    def __init__(self, product_ids, margins, horizon: int, c: float = 1.0):
        self.product_ids = tuple(product_ids)
        self.margins = np.asarray(margins, dtype=float)
        self.horizon = int(horizon)
        self.c = float(c)
        n = len(self.product_ids)
        # candidate assortments: every nonempty subset, as a membership matrix
        self._members = np.array(
            [[(mask >> i) & 1 for i in range(n)] for mask in range(1, 1 << n)],
            dtype=float,
        )
        self.reset()

    def reset(self, rng=None):
        n = len(self.product_ids)
        self.epoch = 1
        self.n_epochs = np.zeros(n)
        self.total_purchases = np.zeros(n)
        self.vbar = np.ones(n)
        self.ucb = np.ones(n)
        self._epoch_counts = np.zeros(n)
        self._assortment = self._best_assortment(self.ucb)

    def _best_assortment(self, scores):
        revs = (self._members @ (self.margins * scores)) / (1.0 + self._members @ scores)
        return self._members[int(np.argmax(revs))] > 0.0

    def current_display(self) -> frozenset:
        ids = [self.product_ids[i] for i in np.flatnonzero(self._assortment)]
        return frozenset([0, *ids])

    def observe(self, outcome) -> None:
        """Record one vote for a product id (0 = no purchase)."""
        if outcome == 0:
            sel = self._assortment
            self.n_epochs[sel] += 1.0
            self.total_purchases[sel] += self._epoch_counts[sel]
            np.divide(self.total_purchases, self.n_epochs, out=self.vbar,
                      where=self.n_epochs > 0)
            rad = self.c * math.log(math.sqrt(len(self.product_ids)) * self.epoch + 1.0)
            with np.errstate(divide="ignore", invalid="ignore"):
                bonus = np.sqrt(self.vbar * rad / self.n_epochs) + rad / self.n_epochs
            self.ucb = np.where(self.n_epochs > 0, self.vbar + bonus, 1.0)
            self.epoch += 1
            self._epoch_counts[:] = 0.0
            self._assortment = self._best_assortment(self.ucb)
        else:
            i = self.product_ids.index(outcome)
            self._epoch_counts[i] += 1.0

    def terminal_action_id(self) -> int:
        """Launch choice under the terminal point estimates (0 = discard)."""
        v = self.vbar
        revs = self.margins * v / (1.0 + v)
        k = int(np.argmax(revs))
        return self.product_ids[k] if revs[k] > 0.0 else 0


def mnlbandit_step(state: MNLBanditPolicy, last_outcome=None) -> frozenset:
    """Feed the last outcome (None before the first vote) and get the display."""
    if last_outcome is not None:
        state.observe(last_outcome)
    return state.current_display()


def ttps_step(inst: Instance, arms, delta: float, beta: float, rng) -> Experiment:
    """One randomized top-two draw."""
    pol = TTPSPolicy(inst, arms, beta)
    dec = pol.decide(delta, rng)
    return dec.experiment
