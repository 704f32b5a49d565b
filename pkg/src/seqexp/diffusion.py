"""Diffusion-regime machinery.

Calibration of the limiting outcome kernel and score vectors from an
experiment's outcome laws, maximum-volatility experiment selection,
closed-form two-action free-boundary solutions, and their pairwise-max
composition into the full diffusion value function.

In the continuation region the value solves

    (1/2) * sigma2 * d^2 (1-d)^2 * f''(d) = r * f(d),

whose basis is f0 = (1-d)^g d^(1-g), f1 = d^g (1-d)^(1-g) with
g = (1 + sqrt(1 + 8 r / sigma2)) / 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from . import _kernels
from .model import ActionPayoff, Experiment, Instance, ModelError

_LO_FLOOR = 1e-13


class DiffusionError(RuntimeError):
    pass


@dataclass(frozen=True)
class AsymptoticExperiment:
    """Limiting kernel and per-hypothesis score vectors of an experiment.

    ``rate_scaled`` records whether the scores already absorb the
    sqrt(arrival-rate) factor (true for calibrated experiments, false for
    analytic scaling limits); it decides whether ``vol_term`` is per unit
    time or per unit rate.
    """

    experiment_id: int
    kernel: np.ndarray
    alpha0: np.ndarray
    alpha1: np.ndarray
    rate_scaled: bool = True
    centering: tuple = (0.0, 0.0)
    objective: float = 0.0

    def __post_init__(self):
        k = np.asarray(self.kernel, dtype=float)
        object.__setattr__(self, "kernel", k)
        object.__setattr__(self, "alpha0", np.asarray(self.alpha0, dtype=float))
        object.__setattr__(self, "alpha1", np.asarray(self.alpha1, dtype=float))
        if abs(k.sum() - 1.0) > 1e-9 or np.any(k <= 0.0):
            raise ModelError("kernel must be a strictly positive probability vector")

    @property
    def vol_term(self) -> float:
        d = self.alpha1 - self.alpha0
        return float(np.dot(d * d, self.kernel))


def calibrate_arrays(q0: np.ndarray, q1: np.ndarray, lam: float,
                     experiment_id: int = -1) -> AsymptoticExperiment:
    """Calibrate the limiting kernel of an experiment from its outcome laws.

    The target program minimizes the worst relative error
    max_{theta,x} |q_theta(x)/Q(x) - 1| over probability vectors Q. Per
    outcome, the two relative errors are equalized at the midpoint
    Q(x) = (q0(x) + q1(x))/2, and the midpoints already sum to one, so
    the coordinate pass lands there in a single sweep with the simplex
    projection idle. For two-outcome laws this point attains the exact
    min-max optimum (the binding coordinate's feasible interval
    degenerates); with more outcomes the program's optimum need not be
    unique and this selection is the documented deterministic choice.
    Scores are sqrt(lam) * (q_theta/Q - 1), recentred to kernel-mean zero
    with the applied shift recorded as a diagnostic.
    """
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    kernel = 0.5 * (q0 + q1)
    kernel = kernel / kernel.sum()
    t = max(np.abs(q0 / kernel - 1.0).max(), np.abs(q1 / kernel - 1.0).max())

    root = math.sqrt(lam) if lam > 0 else 0.0
    alpha0 = root * (q0 / kernel - 1.0)
    alpha1 = root * (q1 / kernel - 1.0)
    c0 = float(np.dot(alpha0, kernel))
    c1 = float(np.dot(alpha1, kernel))
    return AsymptoticExperiment(
        experiment_id=experiment_id,
        kernel=kernel,
        alpha0=alpha0 - c0,
        alpha1=alpha1 - c1,
        rate_scaled=True,
        centering=(c0, c1),
        objective=float(t),
    )


def calibrate_kernel(e: Experiment, lam: float) -> AsymptoticExperiment:
    return calibrate_arrays(e.q0, e.q1, lam, experiment_id=e.id)


def select_max_vol(asyms) -> tuple[int, float]:
    """Experiment with the largest belief-volatility term; ties to lower id."""
    asyms = list(asyms)
    if not asyms:
        raise ModelError("empty experiment list")
    best = min(asyms, key=lambda a: (-a.vol_term, a.experiment_id))
    return best.experiment_id, best.vol_term


@dataclass(frozen=True)
class DiffusionModel:
    """Belief diffusion d(delta) = sigma * delta * (1-delta) dW with discounting."""

    sigma2: float
    r: float
    selected_experiment: int = -1

    def __post_init__(self):
        if self.sigma2 <= 0.0:
            raise ModelError("sigma2 must be positive")
        if self.r <= 0.0:
            raise ModelError("discount rate must be positive")

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    @property
    def gamma(self) -> float:
        return 0.5 * (1.0 + math.sqrt(1.0 + 8.0 * self.r / self.sigma2))

    @classmethod
    def from_max_vol(cls, asyms, r: float, lam: float | None = None) -> "DiffusionModel":
        wid, vol = select_max_vol(asyms)
        winner = next(a for a in asyms if a.experiment_id == wid)
        if winner.rate_scaled:
            sigma2 = vol
        else:
            if lam is None:
                raise ModelError("arrival rate required for unscaled score vectors")
            sigma2 = lam * vol
        return cls(sigma2=sigma2, r=r, selected_experiment=wid)


# ---------------------------------------------------------------------------
# Two-action free boundary
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PairSolution:
    """Closed-form stopping solution for one action pair.

    ``left`` is the action whose payoff dominates at delta = 0. On
    [lo, hi] the value is c0*(1-d)^g d^(1-g) + c1*(1-d)^(1-g) d^g, outside
    it coincides with max of the two payoff lines.
    """

    i: int
    j: int
    gamma: float
    delta_hat: float
    lo: float
    hi: float
    c0: float
    c1: float
    degenerate: bool
    left: ActionPayoff
    right: ActionPayoff

    def payoff(self, delta):
        delta = np.asarray(delta, dtype=float)
        return np.maximum(self.left.value(delta), self.right.value(delta))

    def _terms(self, delta):
        d = np.asarray(delta, dtype=float)
        g = self.gamma
        lo = self.lo
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            ln_d = np.log(d)
            ln_1d = np.log1p(-d)
            base0 = math.log(lo) - math.log1p(-lo)
            t0 = self._k0 * np.exp((1.0 - g) * ln_d + g * ln_1d + g * base0)
            t1 = self._k1 * np.exp(g * ln_d + (1.0 - g) * ln_1d - (g - 1.0) * base0)
        return t0, t1

    @property
    def _k0(self):
        a, b, g, lo = self.left.alpha, self.left.beta, self.gamma, self.lo
        return ((g - 1.0) * lo * b + (g - lo) * a) / ((2.0 * g - 1.0) * lo)

    @property
    def _k1(self):
        a, b, g, lo = self.left.alpha, self.left.beta, self.gamma, self.lo
        return (g * lo * b + (g - 1.0 + lo) * a) / ((2.0 * g - 1.0) * lo)

    def continuation_value(self, delta):
        t0, t1 = self._terms(delta)
        return t0 + t1

    def continuation_derivative(self, delta):
        d = np.asarray(delta, dtype=float)
        g = self.gamma
        t0, t1 = self._terms(d)
        return t0 * ((1.0 - g) / d - g / (1.0 - d)) + t1 * (g / d - (1.0 - g) / (1.0 - d))

    def value(self, delta):
        d = np.asarray(delta, dtype=float)
        stopped = self.payoff(d)
        if self.degenerate:
            return stopped
        inside = (d > self.lo) & (d < self.hi)
        out = np.array(stopped, dtype=float)
        if np.any(inside):
            out[inside] = self.continuation_value(d[inside])
        return out if out.ndim else float(out)

    def derivative(self, delta):
        d = np.asarray(delta, dtype=float)
        slope = np.where(d < self.delta_hat, self.left.beta, self.right.beta)
        if self.degenerate:
            return slope if slope.ndim else float(slope)
        inside = (d > self.lo) & (d < self.hi)
        out = np.array(slope, dtype=float)
        if np.any(inside):
            out[inside] = self.continuation_derivative(d[inside])
        return out if out.ndim else float(out)


def _orient(a_i: ActionPayoff, a_j: ActionPayoff):
    if a_i.beta == a_j.beta:
        raise ModelError(f"actions {a_i.id}, {a_j.id}: parallel payoffs (dominated pair)")
    dhat = (a_j.alpha - a_i.alpha) / (a_i.beta - a_j.beta)
    if not 0.0 < dhat < 1.0:
        raise ModelError(
            f"actions {a_i.id}, {a_j.id}: no interior payoff crossing (dominated pair)"
        )
    left, right = (a_i, a_j) if a_i.alpha > a_j.alpha else (a_j, a_i)
    return left, right, dhat


def solve_pair(a_i: ActionPayoff, a_j: ActionPayoff, model: DiffusionModel) -> PairSolution:
    """Thresholds and integration constants for a two-action problem.

    The lower threshold pins the continuation branch to the left payoff
    line (value matching and smooth pasting hold there by construction);
    it is then moved until the branch touches the right line tangentially,
    which yields the upper threshold. The touch point is located through
    the root of the derivative gap, so both matching residuals at the
    upper threshold sit near machine precision.
    """
    left, right, dhat = _orient(a_i, a_j)
    g = model.gamma

    def make(lo):
        return PairSolution(
            i=left.id, j=right.id, gamma=g, delta_hat=dhat, lo=lo, hi=dhat,
            c0=0.0, c1=0.0, degenerate=False, left=left, right=right,
        )

    probe = np.unique(np.concatenate([
        np.linspace(dhat, 1.0 - 1e-9, 513),
        dhat + (1.0 - dhat - 1e-9) * np.logspace(-12, 0, 61),
    ]))

    def tangency_gap(lo):
        """(min of branch - right line on [dhat, 1), its argmin)."""
        sol = make(lo)
        vals = sol.continuation_value(probe) - right.value(probe)
        k = int(np.nanargmin(vals))
        a = probe[max(k - 1, 0)]
        b = probe[min(k + 1, len(probe) - 1)]
        da = sol.continuation_derivative(a) - right.beta
        db = sol.continuation_derivative(b) - right.beta
        if np.isfinite(da) and np.isfinite(db) and da < 0.0 < db:
            for _ in range(100):
                m = 0.5 * (a + b)
                dm = sol.continuation_derivative(m) - right.beta
                if dm < 0.0:
                    a = m
                else:
                    b = m
            k_star = 0.5 * (a + b)
        else:
            k_star = probe[k]
        return float(sol.continuation_value(k_star) - right.value(k_star)), float(k_star)

    scale = max(1.0, abs(left.alpha), abs(left.alpha + left.beta),
                abs(right.alpha), abs(right.alpha + right.beta))
    tol = 1e-10 * scale

    lo_hi = dhat
    m_hi, _ = tangency_gap(lo_hi)
    if m_hi >= -tol:
        # branch already tangent (or above) at the crossing: no interior region
        return PairSolution(i=left.id, j=right.id, gamma=g, delta_hat=dhat,
                            lo=dhat, hi=dhat, c0=0.0, c1=0.0, degenerate=True,
                            left=left, right=right)
    lo_lo = dhat * 0.5
    while True:
        m, _ = tangency_gap(lo_lo)
        if m > 0.0:
            break
        lo_lo *= 0.25
        if lo_lo < _LO_FLOOR:
            return PairSolution(i=left.id, j=right.id, gamma=g, delta_hat=dhat,
                                lo=dhat, hi=dhat, c0=0.0, c1=0.0, degenerate=True,
                                left=left, right=right)

    hi = dhat
    for _ in range(200):
        mid = math.sqrt(lo_lo * lo_hi)
        m, hi = tangency_gap(mid)
        if abs(m) <= tol:
            lo_lo = mid
            break
        if m > 0.0:
            lo_lo = mid
        else:
            lo_hi = mid
        if (lo_hi - lo_lo) <= 1e-15 * lo_hi:
            break
    lo = lo_lo
    m, hi = tangency_gap(lo)
    sol = make(lo)
    # regions thinner than any usable mesh are reported as empty
    if hi - lo < 1e-6:
        return PairSolution(i=left.id, j=right.id, gamma=g, delta_hat=dhat,
                            lo=dhat, hi=dhat, c0=0.0, c1=0.0, degenerate=True,
                            left=left, right=right)
    base = (lo / (1.0 - lo))
    return PairSolution(
        i=left.id, j=right.id, gamma=g, delta_hat=dhat, lo=lo, hi=hi,
        c0=sol._k0 * base ** g, c1=sol._k1 * base ** (1.0 - g),
        degenerate=False, left=left, right=right,
    )


# ---------------------------------------------------------------------------
# Pairwise-max composition
# ---------------------------------------------------------------------------

@dataclass
class DiffusionValue:
    """Composed diffusion value: pointwise max of all pair solutions.

    ``breakpoints`` partition [0, 1]; ``tags[k]`` describes the segment
    (breakpoints[k], breakpoints[k+1]) as ("stop", action_id) or
    ("continue", (i, j)).
    """

    model: DiffusionModel
    pairs: tuple
    breakpoints: np.ndarray
    tags: list
    actions: tuple

    def value(self, delta):
        d = np.asarray(delta, dtype=float)
        vals = np.stack([p.value(d) for p in self.pairs])
        out = vals.max(axis=0)
        return out if out.ndim else float(out)

    def payoff(self, delta):
        d = np.asarray(delta, dtype=float)
        vals = np.stack([a.value(d) for a in self.actions])
        out = vals.max(axis=0)
        return out if out.ndim else float(out)

    def _segment(self, delta: float) -> int:
        k = int(np.searchsorted(self.breakpoints, delta, side="right") - 1)
        return min(max(k, 0), len(self.tags) - 1)

    def in_intervention(self, delta: float) -> bool:
        """Stop intervals are closed: their endpoints count as intervention."""
        for k, tag in enumerate(self.tags):
            if tag[0] == "stop":
                if self.breakpoints[k] - 1e-12 <= delta <= self.breakpoints[k + 1] + 1e-12:
                    return True
        return False

    def intervention_intervals(self):
        out = []
        for k, tag in enumerate(self.tags):
            if tag[0] == "stop":
                out.append((float(self.breakpoints[k]), float(self.breakpoints[k + 1])))
        return out

    def to_csv(self, path, mesh: float = 1e-3) -> None:
        nodes = np.arange(0.0, 1.0 + mesh / 2, mesh)
        vals = self.value(nodes)
        with open(path, "w") as fh:
            fh.write("delta,value,tag\n")
            for d, v in zip(nodes, vals):
                tag = self.tags[self._segment(float(d))]
                lab = f"stop:{tag[1]}" if tag[0] == "stop" else f"continue:{tag[1][0]}-{tag[1][1]}"
                fh.write(f"{d:.12g},{v:.12g},{lab}\n")

    def pair_table_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("i,j,gamma,delta_hat,lo,hi,c0,c1,degenerate\n")
            for p in self.pairs:
                fh.write(
                    f"{p.i},{p.j},{p.gamma:.12g},{p.delta_hat:.12g},{p.lo:.12g},"
                    f"{p.hi:.12g},{p.c0:.12g},{p.c1:.12g},{int(p.degenerate)}\n"
                )


def _tag_derivative(dv: "DiffusionValue", tag, delta, side) -> float:
    """One-sided derivative of the piece owning the adjacent segment."""
    if tag[0] == "stop":
        action = next(a for a in dv.actions if a.id == tag[1])
        return float(action.beta)
    pair = next(p for p in dv.pairs if (p.i, p.j) == tag[1])
    d = min(max(delta, pair.lo), pair.hi)
    return float(pair.continuation_derivative(d))


def compose_value(inst: Instance, model: DiffusionModel,
                  mesh: float = 1e-3, check: bool = True) -> DiffusionValue:
    """Compose all two-action solutions into the full diffusion value.

    Validates the result: the composed function must dominate the payoff,
    be continuously differentiable at interior breakpoints, and satisfy
    the variational system (elliptic operator nonpositive everywhere,
    zero on the continuation set) up to finite-difference tolerance.
    Violations raise DiffusionError since they indicate a solver bug.
    """
    actions = inst.actions
    if len(actions) < 2:
        raise ModelError("need at least two actions")
    pairs = tuple(
        solve_pair(a, b, model) for a, b in combinations(actions, 2)
    )
    nodes = np.arange(0.0, 1.0 + mesh / 2, mesh)
    vals = np.stack([p.value(nodes) for p in pairs])
    composed = vals.max(axis=0)
    active = vals.argmax(axis=0)
    g_nodes = np.stack([a.value(nodes) for a in actions]).max(axis=0)
    if np.min(composed - g_nodes) < -1e-9:
        raise DiffusionError("composed value falls below the terminal payoff")

    stop = composed - g_nodes <= 1e-9

    def stop_action_at(d):
        av = [a.value(d) for a in actions]
        return actions[int(np.argmax(av))].id

    def seg_state(k):
        if stop[k]:
            return ("stop", stop_action_at(nodes[k]))
        p = pairs[active[k]]
        return ("continue", (p.i, p.j))

    pair_of = {(p.i, p.j): p for p in pairs}
    states = [seg_state(k) for k in range(len(nodes))]
    breaks = [0.0]
    tags = []
    run_state = states[0]
    for k in range(1, len(nodes)):
        if states[k] == run_state:
            continue
        a, b = float(nodes[k - 1]), float(nodes[k])
        inserts = _refine_transition(pair_of, actions, a, b,
                                     run_state, states[k], stop_action_at)
        for point, new_state in inserts:
            if point > breaks[-1] + 1e-12:
                breaks.append(point)
                tags.append(run_state)
            run_state = new_state
    breaks.append(1.0)
    tags.append(run_state)
    dv = DiffusionValue(model=model, pairs=pairs,
                        breakpoints=np.array(breaks), tags=tags, actions=actions)
    if check:
        _check_smooth(dv)
        check_qvi_residuals(dv, mesh=mesh)
    return dv


def _refine_transition(pair_of, actions, a, b, state_a, state_b, stop_action_at):
    """Breakpoints of the state change inside (a, b) as (point, next_state).

    A continue-to-continue change hides a stop sliver between the active
    pair's upper threshold and the next pair's lower threshold whenever
    the mesh stepped over it; the sliver is reinstated so every boundary
    is a genuine pasting point.
    """
    # the near-threshold nodes sit within the stop-detection tolerance, so
    # the true boundary may fall up to one mesh cell outside the bracket
    slack = b - a
    if state_a[0] != state_b[0]:
        cont = state_b if state_b[0] == "continue" else state_a
        p = pair_of[cont[1]]
        for t in (p.lo, p.hi):
            if a - slack <= t <= b + slack:
                return [(float(t), state_b)]
        return [(0.5 * (a + b), state_b)]
    if state_a[0] == "stop":
        # payoff-line crossing between two stop segments
        ai = next(x for x in actions if x.id == state_a[1])
        aj = next(x for x in actions if x.id == state_b[1])
        if ai.beta != aj.beta:
            t = (aj.alpha - ai.alpha) / (ai.beta - aj.beta)
            if a - slack <= t <= b + slack:
                return [(float(t), state_b)]
        return [(0.5 * (a + b), state_b)]
    pa = pair_of[state_a[1]]
    pb = pair_of[state_b[1]]
    if (not pa.degenerate and not pb.degenerate
            and a - slack <= pa.hi <= pb.lo <= b + slack):
        mid = 0.5 * (pa.hi + pb.lo)
        return [(float(pa.hi), ("stop", stop_action_at(mid))),
                (float(pb.lo), state_b)]
    lo, hi = a, b
    for _ in range(80):
        m = 0.5 * (lo + hi)
        if pa.value(m) >= pb.value(m):
            lo = m
        else:
            hi = m
    return [(0.5 * (lo + hi), state_b)]


def _check_smooth(dv: DiffusionValue, tol: float = 1e-6) -> None:
    """C1 continuity at interior breakpoints.

    Payoff kinks survive in the composed value only when the pair
    straddling them is degenerate (empty continuation region); those
    breakpoints are genuine kinks of the stopped value and are skipped.
    """
    for k, b in enumerate(dv.breakpoints[1:-1], start=1):
        left, right = dv.tags[k - 1], dv.tags[k]
        if left[0] == "stop" and right[0] == "stop":
            ids = tuple(sorted((left[1], right[1])))
            pair = next((p for p in dv.pairs if tuple(sorted((p.i, p.j))) == ids), None)
            if pair is None or pair.degenerate:
                continue
        dl = _tag_derivative(dv, left, float(b), -1)
        dr = _tag_derivative(dv, right, float(b), +1)
        if abs(dl - dr) > tol:
            raise DiffusionError(
                f"composed value is not C1 at {b:.6g}: slopes {dl:.8g} vs {dr:.8g}"
            )


def check_qvi_residuals(dv: DiffusionValue, mesh: float = 1e-3,
                        tol: float = 1e-6, fd_step: float = 1e-4):
    """Variational residuals of the composed value on an interior mesh.

    The second derivative is taken by central differences with step
    ``fd_step``; nodes whose stencil straddles a breakpoint are skipped.
    Returns (max |residual| on continuation, max positive part elsewhere).
    """
    model = dv.model
    nodes = np.arange(mesh, 1.0, mesh)
    dist = np.min(np.abs(nodes[:, None] - dv.breakpoints[None, :]), axis=1)
    nodes = nodes[dist > max(3.0 * fd_step, 1.5 * mesh)]
    v0 = dv.value(nodes)
    vp = dv.value(nodes + fd_step)
    vm = dv.value(nodes - fd_step)
    vpp = dv.value(nodes + 2.0 * fd_step)
    vmm = dv.value(nodes - 2.0 * fd_step)
    # fourth-order central stencil keeps truncation harmless near thresholds
    second = (-vpp + 16.0 * vp - 30.0 * v0 + 16.0 * vm - vmm) / (12.0 * fd_step ** 2)
    hv = 0.5 * model.sigma2 * nodes**2 * (1.0 - nodes)**2 * second - model.r * v0
    g = dv.payoff(nodes)
    cont = v0 - g > 1e-9
    res_cont = float(np.max(np.abs(hv[cont]))) if np.any(cont) else 0.0
    res_all = float(np.max(hv)) if len(hv) else 0.0
    if res_cont > tol or res_all > tol:
        raise DiffusionError(
            f"variational residual violation: continuation {res_cont:.3g}, "
            f"one-sided {res_all:.3g} (tol {tol})"
        )
    return res_cont, res_all


# ---------------------------------------------------------------------------
# Stopping statistics and path simulation
# ---------------------------------------------------------------------------

def expected_exit_profile(model: DiffusionModel, delta: float) -> float:
    """Antiderivative-style profile with unit image under the generator."""
    if delta <= 0.0 or delta >= 1.0:
        return math.inf
    return (2.0 / model.sigma2) * (2.0 * delta - 1.0) * math.log(delta / (1.0 - delta))


def stopping_stats(pair: PairSolution, model: DiffusionModel,
                   delta: float) -> tuple[float, float]:
    """Exit-through-top probability and expected exit time from (lo, hi)."""
    lo, hi = pair.lo, pair.hi
    if delta >= hi:
        return 1.0, 0.0
    if delta <= lo:
        return 0.0, 0.0
    if not (1e-9 < lo and hi < 1.0 - 1e-9):
        raise DiffusionError("thresholds must be interior for exit statistics")
    p_hi = (delta - lo) / (hi - lo)
    tau = (p_hi * expected_exit_profile(model, hi)
           + (1.0 - p_hi) * expected_exit_profile(model, lo)
           - expected_exit_profile(model, delta))
    return float(p_hi), float(tau)


def simulate_sde(model: DiffusionModel, delta0: float, dt: float, horizon: float,
                 seed: int, n_paths: int = 1) -> np.ndarray:
    """Euler-Maruyama paths of the belief diffusion, clamped to [0, 1].

    Returns shape (n_steps + 1,) for a single path, else (n_paths, n_steps + 1).
    """
    if dt <= 0.0:
        raise ModelError("dt must be positive")
    n_steps = int(round(horizon / dt))
    out = _kernels.sde_paths(delta0, model.sigma, dt, n_steps, n_paths, seed)
    return out[0] if n_paths == 1 else out


def simulate_first_exit(model: DiffusionModel, delta0: float, lo: float, hi: float,
                        dt: float, n_paths: int, seed: int,
                        max_steps: int | None = None):
    """Monte-Carlo first exit of the diffusion from (lo, hi).

    Returns (tau, hit_hi, discount) arrays; used as a validation oracle
    for the closed-form exit statistics and pair values.
    """
    if max_steps is None:
        max_steps = int(50.0 / (model.sigma2 * dt))
    return _kernels.sde_first_exit(delta0, lo, hi, model.sigma, model.r,
                                   dt, n_paths, max_steps, seed)
