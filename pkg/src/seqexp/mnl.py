"""Crowdvoting instantiation: multinomial-logit votes over display sets.

Products carry intrinsic utilities under each hypothesis; a voter shown a
display set picks version i with probability proportional to
exp(mu * u_i). Display sets always include the no-vote option, product 0,
whose utility is zero under both hypotheses.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .diffusion import AsymptoticExperiment
from .model import ActionPayoff, Experiment, Hypothesis, Instance, ModelError


@dataclass(frozen=True)
class MnlProduct:
    id: int
    u0: float
    u1: float
    price: float = 0.0
    cost: float = 0.0
    launch_cost: float = 0.0

    @property
    def margin(self) -> float:
        return self.price - self.cost

    @property
    def delta_u(self) -> float:
        return self.u1 - self.u0

    def utility(self, theta: Hypothesis) -> float:
        return self.u0 if theta is Hypothesis.THETA0 else self.u1


@dataclass(frozen=True, eq=False)
class MnlMarket:
    products: tuple
    mu: float = 1.0
    lambda_v: float = 1.0
    lambda_s: float = 1.0
    r: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "products", tuple(self.products))
        if self.mu <= 0.0:
            raise ModelError("Gumbel scale mu must be positive")
        ids = [p.id for p in self.products]
        if 0 in ids:
            raise ModelError("product id 0 is reserved for the no-purchase option")
        if len(set(ids)) != len(ids):
            raise ModelError("duplicate product ids")

    @property
    def n(self) -> int:
        return len(self.products)

    def product_by_id(self, pid: int) -> MnlProduct:
        for p in self.products:
            if p.id == pid:
                return p
        raise ModelError(f"no product with id {pid}")

    def by_delta_u(self):
        """Products sorted ascending by the utility gap u1 - u0."""
        return sorted(self.products, key=lambda p: (p.delta_u, p.id))


def _utilities(m: MnlMarket, ids, theta: Hypothesis) -> np.ndarray:
    out = np.empty(len(ids))
    for k, i in enumerate(ids):
        out[k] = 0.0 if i == 0 else m.product_by_id(i).utility(theta)
    return out


def choice_probs(m: MnlMarket, display, theta: Hypothesis) -> np.ndarray:
    """MNL choice probabilities over the sorted display members."""
    ids = sorted(display)
    if not ids:
        raise ModelError("empty display set")
    if ids[0] != 0:
        raise ModelError("display set must include the no-purchase option 0")
    u = _utilities(m, ids, theta)
    w = np.exp(m.mu * u - (m.mu * u).max())
    return w / w.sum()


def experiment_from_display(m: MnlMarket, display, exp_id: int = 0) -> Experiment:
    """Voting experiment whose outcomes are the display members."""
    ids = tuple(sorted(display))
    return Experiment(
        id=exp_id,
        outcomes=ids,
        q0=choice_probs(m, ids, Hypothesis.THETA0),
        q1=choice_probs(m, ids, Hypothesis.THETA1),
    )


def sales_payoff(m: MnlMarket, assortment, action_id: int | None = None) -> ActionPayoff:
    """Discounted sales stream payoff of launching an assortment.

    Purchases arrive at rate lambda_s and follow the same MNL over the
    assortment plus the no-purchase option; per-product margins are
    discounted at rate r and launch costs are charged once.
    """
    ids = sorted(set(assortment))
    if 0 in ids:
        raise ModelError("the no-purchase option cannot be launched")
    if not ids:
        raise ModelError("empty assortment")
    display = [0, *ids]
    q0 = choice_probs(m, display, Hypothesis.THETA0)
    q1 = choice_probs(m, display, Hypothesis.THETA1)
    phi = 0.0
    beta = 0.0
    for k, i in enumerate(display[1:], start=1):
        p = m.product_by_id(i)
        scale = p.margin * m.lambda_s / m.r
        phi += scale * q1[k] - p.launch_cost
        beta += scale * (q0[k] - q1[k])
    if action_id is None:
        if len(ids) != 1:
            raise ModelError("action_id required for multi-product assortments")
        action_id = ids[0]
    return ActionPayoff(id=action_id, alpha=phi, beta=beta)


def vote_revenue(m: MnlMarket, display, theta: Hypothesis) -> float:
    """Expected margin collected from one choice event over the display."""
    ids = sorted(display)
    probs = choice_probs(m, ids, theta)
    rev = 0.0
    for k, i in enumerate(ids):
        if i != 0:
            rev += m.product_by_id(i).margin * probs[k]
    return rev


def np_scaling(m: MnlMarket, k: float) -> MnlMarket:
    """Noisy-preferences instance k: shock variance up by k, arrivals up by k."""
    if k <= 0:
        raise ModelError("scale must be positive")
    return MnlMarket(products=m.products, mu=m.mu / math.sqrt(k),
                     lambda_v=m.lambda_v * k, lambda_s=m.lambda_s, r=m.r)


def interval_sets(n: int):
    """All rank displays {0} | {1..i} | {j..n} for 0 <= i < j <= n.

    Ranks refer to products sorted ascending by the utility gap. The
    family has C(n+1, 2) members (the full display appears once per
    adjacent pair).
    """
    out = []
    for i in range(0, n + 1):
        for j in range(i + 1, n + 1):
            out.append(frozenset([0, *range(1, i + 1), *range(j, n + 1)]))
    return out


def closed_interval_sets(n: int):
    """Interval family closed under relabeling of the two hypotheses.

    Swapping the hypotheses negates every utility gap and reverses the
    ranking, which maps a top-anchored suffix {0} | {j..n} to a prefix
    {0} | {1..i} that the plain family lacks; the design optimum can land
    on either orientation, so both are searched. Still O(n^2) sets.
    """
    out = list(interval_sets(n))
    seen = set(out)
    for i in range(1, n + 1):
        s = frozenset([0, *range(1, i + 1)])
        if s not in seen:
            out.append(s)
            seen.add(s)
    return out


def interval_displays(m: MnlMarket):
    """Orientation-closed interval family in product ids."""
    ranked = [p.id for p in m.by_delta_u()]
    out = []
    for ranks in closed_interval_sets(m.n):
        out.append(frozenset(0 if r == 0 else ranked[r - 1] for r in ranks))
    return out


def _np_design_score(delta_u: np.ndarray) -> float:
    """Mean squared spread of the gaps, the belief-volatility rate up to
    a constant factor."""
    mean = delta_u.mean()
    return float(((delta_u - mean) ** 2).mean())


def np_optimal_display(deltas_u) -> frozenset:
    """Display maximizing the noisy-preferences volatility rate.

    Input is the vector of utility gaps of products 1..n (any order).
    When all gaps share a sign the optimum is the single product with the
    largest absolute gap plus the no-purchase option; otherwise the
    interval family is searched. Returns product indices (1-based) with 0.
    """
    du = np.asarray(deltas_u, dtype=float)
    n = len(du)
    if n == 0:
        raise ModelError("need at least one product")
    if np.all(du >= 0.0) or np.all(du <= 0.0):
        best = int(np.argmax(np.abs(du))) + 1
        return frozenset([0, best])
    order = sorted(range(1, n + 1), key=lambda i: (du[i - 1], i))
    best_set, best_val = None, -np.inf
    for ranks in closed_interval_sets(n):
        ids = frozenset(0 if r == 0 else order[r - 1] for r in ranks)
        gaps = np.array([0.0 if i == 0 else du[i - 1] for i in sorted(ids)])
        val = _np_design_score(gaps)
        if val > best_val + 1e-15:
            best_set, best_val = ids, val
    return best_set


def ih_scaling(m: MnlMarket, xi, k: float, displays=None):
    """Indistinguishable-hypotheses instance k and its analytic limits.

    The alternative utilities become u0 + xi/sqrt(k); the limiting kernel
    of a display is the null MNL law and the theta1 score of member i is
    the kernel-centred xi_i. Returns (scaled market, dict display ->
    AsymptoticExperiment). Score vectors are per unit rate.
    """
    xi = np.asarray(xi, dtype=float)
    if len(xi) != m.n:
        raise ModelError("xi must have one entry per product")
    if k <= 0:
        raise ModelError("scale must be positive")
    root = math.sqrt(k)
    prods = tuple(
        MnlProduct(id=p.id, u0=p.u0, u1=p.u0 + x / root, price=p.price,
                   cost=p.cost, launch_cost=p.launch_cost)
        for p, x in zip(m.products, xi)
    )
    scaled = MnlMarket(products=prods, mu=m.mu, lambda_v=m.lambda_v * k,
                       lambda_s=m.lambda_s, r=m.r)
    if displays is None:
        displays = all_displays(m)
    xi_of = {p.id: x for p, x in zip(m.products, xi)}
    xi_of[0] = 0.0
    out = {}
    for eid, disp in enumerate(displays, start=1):
        ids = sorted(disp)
        nu = np.exp(m.mu * _utilities(m, ids, Hypothesis.THETA0))
        kernel = nu / nu.sum()
        x = np.array([xi_of[i] for i in ids])
        a1 = x - float(kernel @ x)
        out[frozenset(ids)] = AsymptoticExperiment(
            experiment_id=eid, kernel=kernel, alpha0=np.zeros(len(ids)),
            alpha1=a1, rate_scaled=False,
        )
    return scaled, out


def all_displays(m: MnlMarket, max_products: int | None = None):
    """Every display {0} | S over nonempty product subsets S."""
    ids = [p.id for p in m.products]
    out = []
    for size in range(1, len(ids) + 1):
        if max_products is not None and size > max_products:
            break
        for combo in combinations(ids, size):
            out.append(frozenset([0, *combo]))
    return out


def display_experiments(m: MnlMarket, power_set_limit: int = 10):
    """Candidate voting experiments as (display, Experiment) pairs.

    The full power set blows up exponentially, so markets with more than
    ``power_set_limit`` products fall back to the interval family.
    Uninformative displays (identical choice laws) are skipped.
    """
    displays = (all_displays(m) if m.n <= power_set_limit
                else sorted(set(interval_displays(m)), key=sorted))
    out = []
    eid = 0
    for disp in displays:
        eid += 1
        try:
            out.append((disp, experiment_from_display(m, disp, exp_id=eid)))
        except ModelError:
            continue
    return out


def singleton_launch_instance(m: MnlMarket, discard_payoff: float = 0.0,
                              power_set_limit: int = 10):
    """Instance whose actions are single-product launches plus a discard.

    Returns (instance, display map from experiment id to display set).
    """
    actions = [ActionPayoff(id=0, alpha=discard_payoff, beta=0.0)]
    for p in m.products:
        actions.append(sales_payoff(m, [p.id]))
    pairs = display_experiments(m, power_set_limit)
    inst = Instance(actions=tuple(actions),
                    experiments=tuple(e for _, e in pairs),
                    lam=m.lambda_v, r=m.r)
    return inst, {e.id: disp for disp, e in pairs}


def fixed_payoff_instance(m: MnlMarket, actions, power_set_limit: int = 10):
    """Instance pairing externally given payoff lines with the market's
    voting experiments."""
    pairs = display_experiments(m, power_set_limit)
    inst = Instance(actions=tuple(actions),
                    experiments=tuple(e for _, e in pairs),
                    lam=m.lambda_v, r=m.r)
    return inst, {e.id: disp for disp, e in pairs}


def random_market(n: int, rng, mu: float = 1.0, lambda_v: float = 1.0,
                  lambda_s: float = 1.0, r: float = 0.05,
                  margins=None) -> MnlMarket:
    """Market with utilities drawn uniformly on [0, 1]."""
    prods = []
    for i in range(1, n + 1):
        margin = 0.0 if margins is None else float(margins[i - 1])
        prods.append(MnlProduct(id=i, u0=float(rng.random()), u1=float(rng.random()),
                                price=margin))
    return MnlMarket(products=tuple(prods), mu=mu, lambda_v=lambda_v,
                     lambda_s=lambda_s, r=r)


# ---------------------------------------------------------------------------
# Config round trip
# ---------------------------------------------------------------------------

def market_to_dict(m: MnlMarket) -> dict:
    return {
        "mu": m.mu,
        "lambda_v": m.lambda_v,
        "lambda_s": m.lambda_s,
        "r": m.r,
        "products": [
            {"id": p.id, "u0": p.u0, "u1": p.u1, "price": p.price,
             "cost": p.cost, "launch_cost": p.launch_cost}
            for p in m.products
        ],
    }


def market_from_dict(data: dict) -> MnlMarket:
    try:
        prods = tuple(
            MnlProduct(id=int(p["id"]), u0=float(p["u0"]), u1=float(p["u1"]),
                       price=float(p.get("price", 0.0)), cost=float(p.get("cost", 0.0)),
                       launch_cost=float(p.get("launch_cost", 0.0)))
            for p in data["products"]
        )
        return MnlMarket(products=prods, mu=float(data["mu"]),
                         lambda_v=float(data["lambda_v"]),
                         lambda_s=float(data["lambda_s"]), r=float(data["r"]))
    except KeyError as k:
        raise ModelError(f"market config missing field {k}") from None


def save_market(m: MnlMarket, path) -> None:
    with open(path, "w") as fh:
        json.dump(market_to_dict(m), fh, indent=2)
        fh.write("\n")


def load_market(path) -> MnlMarket:
    with open(path) as fh:
        return market_from_dict(json.load(fh))
