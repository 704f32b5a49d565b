"""Problem data model: actions, experiments, belief dynamics, dominance pruning.

An instance couples a finite menu of actions with affine terminal payoffs
R(d) = alpha + beta*d of the belief d = P(null hypothesis), a finite set of
experiments with outcome distributions under each hypothesis, an arrival
rate for experimentation epochs, and a discount rate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

PROB_TOL = 1e-12
TIE_TOL = 1e-12


class Hypothesis(Enum):
    THETA0 = 0
    THETA1 = 1


class ModelError(ValueError):
    """Raised when instance data violates a structural invariant."""


@dataclass(frozen=True)
class ActionPayoff:
    """Affine terminal payoff R(d) = alpha + beta*d.

    R(1) = alpha + beta is the expected payoff when the null hypothesis
    holds, R(0) = alpha the payoff under the alternative.
    """

    id: int
    alpha: float
    beta: float

    def value(self, delta):
        return self.alpha + self.beta * np.asarray(delta, dtype=float)

    def reward(self, hyp: Hypothesis) -> float:
        """Payoff when the true hypothesis is known."""
        if hyp is Hypothesis.THETA0:
            return self.alpha + self.beta
        return self.alpha


@dataclass(frozen=True, eq=False)
class Experiment:
    """Finite-outcome experiment with outcome laws under each hypothesis.

    All outcome probabilities must be strictly positive so likelihood
    ratios stay finite and interior beliefs never jump exactly to 0 or 1.
    """

    id: int
    outcomes: tuple
    q0: np.ndarray
    q1: np.ndarray

    def __post_init__(self):
        q0 = np.asarray(self.q0, dtype=float)
        q1 = np.asarray(self.q1, dtype=float)
        object.__setattr__(self, "outcomes", tuple(self.outcomes))
        object.__setattr__(self, "q0", q0)
        object.__setattr__(self, "q1", q1)
        n = len(self.outcomes)
        if q0.shape != (n,) or q1.shape != (n,):
            raise ModelError(f"experiment {self.id}: probability rows must have length {n}")
        for name, q in (("q0", q0), ("q1", q1)):
            if np.any(q <= 0.0) or np.any(q > 1.0):
                raise ModelError(f"experiment {self.id}: {name} entries must lie in (0, 1]")
            if abs(q.sum() - 1.0) > 1e-12:
                raise ModelError(f"experiment {self.id}: {name} must sum to 1 within 1e-12")
        if np.max(np.abs(q1 - q0)) <= PROB_TOL:
            raise ModelError(f"experiment {self.id}: uninformative (identical outcome laws)")
        object.__setattr__(self, "_index", {x: i for i, x in enumerate(self.outcomes)})

    @property
    def n_outcomes(self) -> int:
        return len(self.outcomes)

    @property
    def ratios(self) -> np.ndarray:
        """Vector of likelihood ratios q1/q0 over outcomes."""
        return self.q1 / self.q0

    def outcome_index(self, x) -> int:
        try:
            return self._index[x]
        except KeyError:
            raise ModelError(f"experiment {self.id}: unknown outcome {x!r}") from None


def likelihood_ratio(e: Experiment, x) -> float:
    """Probability of outcome x under the alternative over its probability under the null."""
    i = e.outcome_index(x)
    return float(e.q1[i] / e.q0[i])


def belief_update(delta: float, e: Experiment, x) -> float:
    """Posterior belief after observing outcome x of experiment e.

    Beliefs 0 and 1 are fixed points.
    """
    lr = likelihood_ratio(e, x)
    return delta / (delta + (1.0 - delta) * lr)


def jump_size(delta: float, e: Experiment, x) -> float:
    """Belief increment produced by outcome x: posterior minus prior."""
    lr = likelihood_ratio(e, x)
    return delta * (1.0 - delta) * (1.0 - lr) / (delta + (1.0 - delta) * lr)


def outcome_probs(delta: float, e: Experiment) -> np.ndarray:
    """Marginal outcome law under belief delta: delta*q0 + (1-delta)*q1."""
    return delta * e.q0 + (1.0 - delta) * e.q1


def posterior_distribution(delta: float, e: Experiment) -> list[tuple[float, float]]:
    """List of (posterior, probability) pairs, one per outcome.

    The posterior is a mean-preserving spread of the prior: the
    probability-weighted posteriors average back to delta.
    """
    probs = outcome_probs(delta, e)
    if delta in (0.0, 1.0):
        return [(float(delta), float(p)) for p in probs]
    posts = delta * e.q0 / probs
    return [(float(z), float(p)) for z, p in zip(posts, probs)]


@dataclass(frozen=True, eq=False)
class Instance:
    """Full problem datum. Dominated actions are removed at construction."""

    actions: tuple
    experiments: tuple
    lam: float
    r: float
    dropped_actions: tuple = ()

    def __post_init__(self):
        actions = tuple(self.actions)
        experiments = tuple(self.experiments)
        if self.lam < 0.0:
            raise ModelError("arrival rate must be nonnegative")
        if self.r <= 0.0:
            raise ModelError("discount rate must be positive")
        if len(actions) < 2:
            raise ModelError("need at least 2 actions")
        if len(experiments) < 1:
            raise ModelError("need at least 1 experiment")
        ids = [a.id for a in actions]
        if len(set(ids)) != len(ids):
            raise ModelError("duplicate action ids")
        eids = [e.id for e in experiments]
        if len(set(eids)) != len(eids):
            raise ModelError("duplicate experiment ids")
        kept, dropped = _prune_affine_dominated(actions)
        object.__setattr__(self, "actions", tuple(kept))
        object.__setattr__(self, "dropped_actions", tuple(dropped))
        object.__setattr__(self, "experiments", experiments)
        _check_payoff_nonnegative(self.actions)

    @property
    def rho(self) -> float:
        """Per-event discount factor lam/(lam+r)."""
        return self.lam / (self.lam + self.r)

    def payoff(self, delta):
        """Upper envelope of the action payoffs at the given beliefs."""
        delta = np.asarray(delta, dtype=float)
        vals = np.stack([a.value(delta) for a in self.actions])
        return vals.max(axis=0)

    def best_actions(self, delta: float) -> frozenset:
        vals = np.array([a.value(delta) for a in self.actions])
        best = vals.max()
        return frozenset(a.id for a, v in zip(self.actions, vals) if v >= best - TIE_TOL)

    def best_action(self, delta: float) -> ActionPayoff:
        """Payoff maximizer at delta; ties go to the lowest action id."""
        vals = [a.value(delta) for a in self.actions]
        best = max(vals)
        cands = [a for a, v in zip(self.actions, vals) if v >= best - TIE_TOL]
        return min(cands, key=lambda a: a.id)

    def experiment_by_id(self, eid: int) -> Experiment:
        for e in self.experiments:
            if e.id == eid:
                return e
        raise ModelError(f"no experiment with id {eid}")

    def action_by_id(self, aid: int) -> ActionPayoff:
        for a in self.actions:
            if a.id == aid:
                return a
        raise ModelError(f"no action with id {aid}")


def terminal_payoff(inst: Instance, delta: float) -> tuple[float, frozenset]:
    """Best immediate expected payoff and the set of maximizing action ids."""
    if not 0.0 <= delta <= 1.0:
        raise ModelError(f"belief {delta} outside [0, 1]")
    return float(inst.payoff(delta)), inst.best_actions(delta)


def _prune_affine_dominated(actions):
    """Drop actions whose payoff line lies below another one on all of [0, 1].

    Two affine payoffs compare on [0, 1] exactly through their endpoint
    values. Ties are broken by keeping the lower id.
    """
    dropped = []
    kept = list(actions)
    for a in list(kept):
        for b in kept:
            if b.id == a.id:
                continue
            a0, a1 = a.alpha, a.alpha + a.beta
            b0, b1 = b.alpha, b.alpha + b.beta
            if b0 >= a0 and b1 >= a1:
                if b0 > a0 or b1 > a1 or b.id < a.id:
                    dropped.append(a)
                    kept.remove(a)
                    break
    return kept, dropped


def _check_payoff_nonnegative(actions):
    """The envelope max_a R_a must be nonnegative on [0, 1].

    The envelope is convex piecewise linear, so its minimum sits at an
    endpoint or at a pairwise crossing point.
    """
    points = [0.0, 1.0]
    for i, a in enumerate(actions):
        for b in actions[i + 1:]:
            db = a.beta - b.beta
            if db != 0.0:
                x = (b.alpha - a.alpha) / db
                if 0.0 < x < 1.0:
                    points.append(x)
    pts = np.array(points)
    vals = np.stack([a.value(pts) for a in actions]).max(axis=0)
    if vals.min() < -1e-12:
        bad = pts[int(np.argmin(vals))]
        raise ModelError(f"terminal payoff envelope is negative near delta={bad:.6g}")


# ---------------------------------------------------------------------------
# Convex-order dominance pruning of experiments
# ---------------------------------------------------------------------------

def _lr_range(e: Experiment) -> tuple[float, float]:
    r = e.ratios
    return float(r.min()), float(r.max())


def _dominates_binary(winner: Experiment, loser: Experiment) -> bool:
    # Binary outcomes: the posterior law of the loser is a convex-order
    # minorant iff its likelihood-ratio range nests inside the winner's.
    wlo, whi = _lr_range(winner)
    llo, lhi = _lr_range(loser)
    return wlo <= llo + PROB_TOL and lhi <= whi + PROB_TOL


def _dominates_general(winner: Experiment, loser: Experiment,
                       deltas: np.ndarray) -> bool:
    """Convex-order test for discrete posterior laws with equal means.

    Checks E[max(Z - c, 0)] at every posterior atom c of both laws, on a
    finite belief mesh. Sufficient for discrete equal-mean laws; the mesh
    makes this a heuristic for more than two outcomes.
    """
    for d in deltas:
        pw = outcome_probs(d, winner)
        zw = d * winner.q0 / pw
        pl = outcome_probs(d, loser)
        zl = d * loser.q0 / pl
        atoms = np.concatenate([zw, zl])
        ew = np.maximum(zw[None, :] - atoms[:, None], 0.0) @ pw
        el = np.maximum(zl[None, :] - atoms[:, None], 0.0) @ pl
        if np.any(el > ew + 1e-10):
            return False
    return True


def prune_dominated(experiments: Sequence[Experiment],
                    deltas: np.ndarray | None = None):
    """Split experiments into (kept, eliminated) by convex-order dominance.

    An experiment is eliminated when another experiment dominates it
    strictly, or matches it exactly and carries a lower id. Binary pairs
    use the exact likelihood-ratio range containment test; other pairs
    fall back to the mesh test at ``deltas`` (default 101 uniform points).
    """
    experiments = list(experiments)
    if deltas is None:
        deltas = np.linspace(0.0, 1.0, 101)[1:-1]

    def le(a: Experiment, b: Experiment) -> bool:
        # True when b dominates a (a is convex-order below b).
        if a.n_outcomes == 2 and b.n_outcomes == 2:
            return _dominates_binary(b, a)
        return _dominates_general(b, a, deltas)

    eliminated = []
    for a in experiments:
        for b in experiments:
            if b.id == a.id:
                continue
            if le(a, b) and (not le(b, a) or b.id < a.id):
                eliminated.append(a)
                break
    elim_ids = {e.id for e in eliminated}
    kept = [e for e in experiments if e.id not in elim_ids]
    return kept, eliminated


# ---------------------------------------------------------------------------
# Config file round trip (schema documented in docs/schemas.md)
# ---------------------------------------------------------------------------

def instance_to_dict(inst: Instance) -> dict:
    return {
        "lambda": inst.lam,
        "r": inst.r,
        "actions": [
            {"id": a.id, "alpha": a.alpha, "beta": a.beta}
            for a in inst.actions
        ],
        "experiments": [
            {
                "id": e.id,
                "outcomes": list(e.outcomes),
                "q0": [float(v) for v in e.q0],
                "q1": [float(v) for v in e.q1],
            }
            for e in inst.experiments
        ],
    }


def instance_from_dict(data: dict) -> Instance:
    try:
        actions = [
            ActionPayoff(id=int(a["id"]), alpha=float(a["alpha"]), beta=float(a["beta"]))
            for a in data["actions"]
        ]
        experiments = []
        for spec in data["experiments"]:
            experiments.append(
                Experiment(
                    id=int(spec["id"]),
                    outcomes=tuple(spec["outcomes"]),
                    q0=np.array(spec["q0"], dtype=float),
                    q1=np.array(spec["q1"], dtype=float),
                )
            )
        return Instance(
            actions=tuple(actions),
            experiments=tuple(experiments),
            lam=float(data["lambda"]),
            r=float(data["r"]),
        )
    except KeyError as k:
        raise ModelError(f"instance config missing field {k}") from None


def save_instance(inst: Instance, path) -> None:
    with open(path, "w") as fh:
        json.dump(instance_to_dict(inst), fh, indent=2)
        fh.write("\n")


def load_instance(path) -> Instance:
    with open(path) as fh:
        data = json.load(fh)
    return instance_from_dict(data)
