"""Exact solution of the discrete experimentation control problem.

Value iteration on a uniform belief mesh with linear interpolation of
off-mesh posteriors. The fixed point satisfies

    v(d) = max( G(d), rho * max_e sum_x P_d(x, e) * v(post(d, e, x)) ),

with rho = lam/(lam + r) the per-event discount factor. Gauss-Seidel
sweeps run through a numba kernel (see _kernels); an optional Howard
acceleration step evaluates the current greedy policy exactly through a
sparse linear solve, which keeps large rho (high arrival rates) cheap.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels
from .model import Experiment, Instance, ModelError

STOP = -1
_PACKED_BYTES_CAP = 256 * 1024 * 1024


class SolverError(RuntimeError):
    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


@dataclass(frozen=True)
class BeliefGrid:
    """Uniform mesh {0, h, 2h, ..., 1} over the belief interval."""

    mesh_size: float = 1e-3

    def __post_init__(self):
        h = self.mesh_size
        if not 0.0 < h <= 0.1:
            raise ModelError("mesh_size must lie in (0, 0.1]")
        n = round(1.0 / h)
        if abs(n * h - 1.0) > 1e-9:
            raise ModelError("mesh_size must divide 1 evenly")
        object.__setattr__(self, "_n", int(n) + 1)

    @property
    def n_nodes(self) -> int:
        return self._n

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self._n)


@dataclass
class ValueFunction:
    """Piecewise-linear value function with a per-node decision.

    choice[i] is the position of the chosen experiment in
    ``experiment_ids`` or STOP (-1).
    """

    grid: BeliefGrid
    values: np.ndarray
    choice: np.ndarray
    experiment_ids: tuple

    def __call__(self, delta):
        return np.interp(delta, self.grid.nodes, self.values)

    def choice_id(self, i: int):
        c = int(self.choice[i])
        return None if c == STOP else self.experiment_ids[c]

    def choice_labels(self):
        return ["stop" if c == STOP else str(self.experiment_ids[c]) for c in self.choice]

    def continuation_intervals(self):
        """Maximal runs of non-stop nodes as (lo, hi) node values.

        Endpoints carry half-mesh uncertainty.
        """
        nodes = self.grid.nodes
        cont = self.choice != STOP
        out = []
        i = 0
        n = len(nodes)
        while i < n:
            if cont[i]:
                j = i
                while j + 1 < n and cont[j + 1]:
                    j += 1
                out.append((float(nodes[i]), float(nodes[j])))
                i = j + 1
            else:
                i += 1
        return out

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("delta,value,choice\n")
            for d, v, lab in zip(self.grid.nodes, self.values, self.choice_labels()):
                fh.write(f"{d:.12g},{v:.12g},{lab}\n")


@dataclass
class SolveReport:
    iterations: int
    final_residual: float
    wall_time: float
    continuation_intervals: list


class DpStructure:
    """Precomputed interpolation stencils of every experiment on a grid.

    For experiment e and node i, the posterior after outcome x lands at
    grid position idx + w (0 <= w <= 1), reached with probability qd.
    The stencil cache mutates on access; build one structure per worker
    rather than sharing across threads.
    """

    def __init__(self, inst: Instance, grid: BeliefGrid):
        self.inst = inst
        self.grid = grid
        self.nodes = grid.nodes
        self.payoff = inst.payoff(self.nodes)
        self._cache = {}

    def arrays_for(self, e: Experiment):
        key = id(e)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        d = self.nodes[:, None]
        qd = d * e.q0[None, :] + (1.0 - d) * e.q1[None, :]
        post = d * e.q0[None, :] / qd
        t = post * (self.grid.n_nodes - 1)
        idx = np.minimum(t.astype(np.int64), self.grid.n_nodes - 2).astype(np.int32)
        w = np.clip(t - idx, 0.0, 1.0)
        out = (idx, w, qd)
        if len(self._cache) < 64:
            self._cache[key] = out
        return out

    def exp_arrays(self, pos: int):
        return self.arrays_for(self.inst.experiments[pos])

    def expectation(self, values: np.ndarray, e: Experiment) -> np.ndarray:
        """E[ v(posterior) ] per node under experiment e, interpolating v."""
        idx, w, qd = self.arrays_for(e)
        vhat = (1.0 - w) * values[idx] + w * values[idx + 1]
        return np.einsum("ij,ij->i", qd, vhat)

    def continuation_values(self, values: np.ndarray):
        """Best discounted continuation value and argmax position per node."""
        rho = self.inst.rho
        best = np.full(self.grid.n_nodes, -np.inf)
        pos = np.zeros(self.grid.n_nodes, dtype=np.int32)
        for k, e in enumerate(self.inst.experiments):
            val = self.expectation(values, e)
            better = val > best
            best[better] = val[better]
            pos[better] = k
        return rho * best, pos

    def packed(self):
        """Padded (n_exp, n_nodes, max_out) stencil arrays for the sweep kernel."""
        es = self.inst.experiments
        mx = max(e.n_outcomes for e in es)
        nbytes = len(es) * self.grid.n_nodes * mx * 8 * 3
        if nbytes > _PACKED_BYTES_CAP:
            return None
        idx = np.zeros((len(es), self.grid.n_nodes, mx), dtype=np.int32)
        w = np.zeros((len(es), self.grid.n_nodes, mx))
        qd = np.zeros((len(es), self.grid.n_nodes, mx))
        for k, e in enumerate(es):
            i_, w_, q_ = self.arrays_for(e)
            m = e.n_outcomes
            idx[k, :, :m] = i_
            w[k, :, :m] = w_
            qd[k, :, :m] = q_
        return idx, w, qd


def _bellman_values(struct: DpStructure, values: np.ndarray):
    cont, pos = struct.continuation_values(values)
    g = struct.payoff
    stop = g >= cont
    new = np.where(stop, g, cont)
    choice = np.where(stop, STOP, pos).astype(np.int32)
    return new, choice


def bellman_apply(inst: Instance, vf: ValueFunction,
                  struct: DpStructure | None = None) -> ValueFunction:
    """One application of the Bellman operator.

    Ties between stopping and continuing resolve to Stop; ties across
    experiments resolve to the lower experiment position.
    """
    if struct is None:
        struct = DpStructure(inst, vf.grid)
    new, choice = _bellman_values(struct, vf.values)
    return ValueFunction(vf.grid, new, choice, tuple(e.id for e in inst.experiments))


def payoff_value_function(inst: Instance, grid: BeliefGrid) -> ValueFunction:
    """The all-stop value function v = G."""
    nodes = grid.nodes
    return ValueFunction(
        grid,
        inst.payoff(nodes),
        np.full(grid.n_nodes, STOP, dtype=np.int32),
        tuple(e.id for e in inst.experiments),
    )


def _policy_eval_sparse(struct: DpStructure, stop: np.ndarray, rows) -> np.ndarray:
    """Exact value of a stationary decision rule via a sparse solve.

    ``rows[i]`` is None for stop nodes, else a list of (experiment, prob).
    Nodes 0 and 1 are treated as stopped: the belief is absorbed there and
    any further experimentation only discounts the certain payoff.
    """
    n = struct.grid.n_nodes
    rho = struct.inst.rho
    data = [np.ones(n)]
    ii = [np.arange(n)]
    jj = [np.arange(n)]
    b = np.where(stop, struct.payoff, 0.0)
    cont_nodes = np.flatnonzero(~stop)
    groups = {}
    for i in cont_nodes:
        for e, p in rows[i]:
            groups.setdefault(id(e), (e, []))[1].append((i, p))
    for e, pairs in groups.values():
        nodes = np.array([i for i, _ in pairs], dtype=np.int64)
        probs = np.array([p for _, p in pairs])
        idx, w, qd = struct.arrays_for(e)
        coef = rho * probs[:, None] * qd[nodes]
        ii.append(np.repeat(nodes, e.n_outcomes))
        jj.append(idx[nodes].ravel())
        data.append(-(coef * (1.0 - w[nodes])).ravel())
        ii.append(np.repeat(nodes, e.n_outcomes))
        jj.append(idx[nodes].ravel() + 1)
        data.append(-(coef * w[nodes]).ravel())
    mat = sp.csr_matrix(
        (np.concatenate(data), (np.concatenate(ii), np.concatenate(jj))),
        shape=(n, n),
    )
    return spla.spsolve(mat.tocsc(), b)


def _greedy_eval(struct: DpStructure, values: np.ndarray) -> np.ndarray:
    """Exact value of the greedy policy extracted from ``values``."""
    cont, pos = struct.continuation_values(values)
    stop = struct.payoff >= cont
    stop[0] = stop[-1] = True
    es = struct.inst.experiments
    rows = [None if s else [(es[pos[i]], 1.0)] for i, s in enumerate(stop)]
    return _policy_eval_sparse(struct, stop, rows)


def solve(inst: Instance, grid: BeliefGrid | None = None, tol: float = 1e-3,
          gauss_seidel: bool = True, accelerate: bool = True,
          max_sweeps: int = 10**6, check_every: int = 8):
    """Solve the stopping/experimentation problem on the grid.

    Returns (ValueFunction, SolveReport) with sup-norm Bellman residual at
    most ``tol``. ``gauss_seidel`` selects in-place sweeps alternating
    left-to-right and right-to-left; otherwise standard synchronous sweeps
    are used. ``accelerate`` interleaves exact greedy-policy evaluations
    (sparse linear solves), which preserves the monotone-from-below
    iteration and typically lands on the exact fixed point.
    """
    if grid is None:
        grid = BeliefGrid()
    if tol <= 0.0:
        raise ModelError("tol must be positive")
    t0 = time.perf_counter()
    struct = DpStructure(inst, grid)
    eids = tuple(e.id for e in inst.experiments)
    v = struct.payoff.copy()

    if inst.rho == 0.0:
        vf = ValueFunction(grid, v, np.full(grid.n_nodes, STOP, dtype=np.int32), eids)
        report = SolveReport(0, 0.0, time.perf_counter() - t0, [])
        return vf, report

    packed = struct.packed() if gauss_seidel else None
    if packed is not None and not _kernels.USING_NUMBA:
        # the fallback sweep is a Python loop; only worth it on small problems
        work = packed[0].size
        if work > 100_000:
            packed = None
    sweeps = 0
    forward = True
    residual = np.inf
    while sweeps < max_sweeps:
        burst = min(check_every, max_sweeps - sweeps)
        if packed is not None:
            idx, w, qd = packed
            for _ in range(burst):
                _kernels.gs_sweep(v, struct.payoff, inst.rho, idx, w, qd, forward)
                forward = not forward
            sweeps += burst
        else:
            for _ in range(burst):
                v, _ = _bellman_values(struct, v)
            sweeps += burst
        if accelerate:
            v = np.maximum(v, _greedy_eval(struct, v))
        new, choice = _bellman_values(struct, v)
        residual = float(np.max(np.abs(new - v)))
        v = new
        sweeps += 1
        if residual <= tol:
            vf = ValueFunction(grid, v, choice, eids)
            report = SolveReport(
                sweeps, residual, time.perf_counter() - t0,
                vf.continuation_intervals(),
            )
            return vf, report
    raise SolverError(
        f"no convergence after {sweeps} sweeps (residual {residual:.3g})",
        residual=residual,
    )


def _grid_decision_rows(policy, inst: Instance, grid: BeliefGrid):
    """(stop mask, rows) of a belief-Markov policy on the grid nodes."""
    if hasattr(policy, "grid_decisions"):
        return policy.grid_decisions(inst, grid)
    nodes = grid.nodes
    stop = np.zeros(grid.n_nodes, dtype=bool)
    rows = []
    for i, d in enumerate(nodes):
        dist = policy.decision_distribution(float(d))
        if dist is None:
            stop[i] = True
            rows.append(None)
        else:
            rows.append(dist)
    return stop, rows


def _policy_expectations(struct: DpStructure, rows, v: np.ndarray) -> np.ndarray:
    """Per-node expected interpolated value under the given decision rows."""
    out = np.zeros(struct.grid.n_nodes)
    cache = {}
    for i, row in enumerate(rows):
        if row is None:
            continue
        acc = 0.0
        for e, p in row:
            ev = cache.get(id(e))
            if ev is None:
                ev = struct.expectation(v, e)
                cache[id(e)] = ev
            acc += p * ev[i]
        out[i] = acc
    return out


def policy_value(inst: Instance, policy, grid: BeliefGrid | None = None,
                 tol: float = 1e-3, optional_stopping: bool = False) -> ValueFunction:
    """Value function of a fixed belief-Markov policy.

    By default this evaluates the policy literally: the payoff where it
    stops and the discounted expected continuation under its (possibly
    randomized) experiment choice elsewhere; simulated trajectories of
    the policy reproduce this number. With ``optional_stopping`` the
    decision maker may additionally stop wherever that beats continuing
    under the policy's experiment rule, which is what the budget-capped
    recursion converges to as the budget grows. Both are computed through
    sparse solves and verified against ``tol``.
    """
    if grid is None:
        grid = BeliefGrid()
    struct = DpStructure(inst, grid)
    if optional_stopping:
        forced, _ = _grid_decision_rows(policy, inst, grid)
        forced = forced.copy()
        forced[0] = forced[-1] = True
        exp_rows = _grid_experiment_rows(policy, inst, grid)
        stop = np.ones(grid.n_nodes, dtype=bool)
        v = struct.payoff.copy()
        for _ in range(200):
            cont = inst.rho * _policy_expectations(struct, exp_rows, v)
            new_stop = forced | (struct.payoff >= cont)
            v_new = _policy_eval_sparse(
                struct, new_stop,
                [None if s else exp_rows[i] for i, s in enumerate(new_stop)])
            v = np.maximum(v, v_new)
            if np.array_equal(new_stop, stop):
                break
            stop = new_stop
        rows = [None if s else exp_rows[i] for i, s in enumerate(stop)]
        cont = inst.rho * _policy_expectations(struct, exp_rows, v)
        tv = np.where(forced, struct.payoff, np.maximum(struct.payoff, cont))
    else:
        stop, rows = _grid_decision_rows(policy, inst, grid)
        stop = stop.copy()
        stop[0] = stop[-1] = True
        v = _policy_eval_sparse(struct, stop, rows)
        tv = np.where(stop, struct.payoff, 0.0)
        cont = _policy_expectations(struct, rows, v)
        tv[~stop] = inst.rho * cont[~stop]
    residual = float(np.max(np.abs(tv - v)))
    if residual > tol:
        raise SolverError(f"policy evaluation residual {residual:.3g} above {tol}",
                          residual=residual)
    eids = tuple(e.id for e in inst.experiments)
    pos_of = {e.id: k for k, e in enumerate(inst.experiments)}
    choice = np.full(grid.n_nodes, STOP, dtype=np.int32)
    for i in np.flatnonzero(~stop):
        first = rows[i][0][0]
        choice[i] = pos_of.get(first.id, STOP)
    return ValueFunction(grid, v, choice, eids)


class BudgetMode(Enum):
    EXACTLY = "exactly"
    AT_MOST = "at_most"


def finite_budget_value(inst: Instance, policy, T: int,
                        grid: BeliefGrid | None = None,
                        mode: BudgetMode = BudgetMode.AT_MOST) -> ValueFunction:
    """Value of running the policy's experiment rule with a vote budget.

    EXACTLY: stopping before the budget is spent is forbidden; the stage-T
    value is the terminal payoff and interior stages take the discounted
    expectation only. AT_MOST: every stage may stop, taking the max of the
    payoff and the discounted expectation. The stage-0 function returns.
    """
    if T < 0:
        raise ModelError("budget must be nonnegative")
    if grid is None:
        grid = BeliefGrid()
    vals = finite_budget_curve(inst, policy, [T], grid, mode)
    return vals[T]


def finite_budget_curve(inst: Instance, policy, Ts, grid: BeliefGrid | None = None,
                        mode: BudgetMode = BudgetMode.AT_MOST) -> dict:
    """Stage-0 value functions for several budgets in one backward pass.

    AT_MOST stages stop on the policy's stop set and otherwise take the
    better of stopping and one discounted step of the policy's experiment
    rule; EXACTLY stages always take the expectation step.
    """
    if grid is None:
        grid = BeliefGrid()
    struct = DpStructure(inst, grid)
    eids = tuple(e.id for e in inst.experiments)
    pos_of = {e.id: k for k, e in enumerate(inst.experiments)}
    wanted = sorted(set(int(t) for t in Ts))
    if wanted and wanted[0] < 0:
        raise ModelError("budget must be nonnegative")
    exps = _grid_experiment_rows(policy, inst, grid)
    if mode is BudgetMode.AT_MOST:
        forced, _ = _grid_decision_rows(policy, inst, grid)
        forced = forced.copy()
        forced[0] = forced[-1] = True
    else:
        forced = None
    # group nodes by experiment so each stage is a handful of gathers
    groups = {}
    exp_choice = np.zeros(grid.n_nodes, dtype=np.int32)
    for i, row in enumerate(exps):
        for e, p in row:
            key = id(e)
            if key not in groups:
                groups[key] = (e, [], [])
            groups[key][1].append(i)
            groups[key][2].append(p)
        exp_choice[i] = pos_of.get(row[0][0].id, 0)
    glist = [(e, np.array(nodes, dtype=np.int64), np.array(ps))
             for e, nodes, ps in groups.values()]
    out = {}
    v = struct.payoff.copy()
    if 0 in wanted:
        out[0] = ValueFunction(grid, v.copy(),
                               np.full(grid.n_nodes, STOP, dtype=np.int32), eids)
    tmax = wanted[-1] if wanted else 0
    rho = inst.rho
    for t in range(1, tmax + 1):
        cont = np.zeros(grid.n_nodes)
        for e, nodes, ps in glist:
            ev = struct.expectation(v, e)
            cont[nodes] += ps * ev[nodes]
        cont *= rho
        if mode is BudgetMode.EXACTLY:
            v = cont
        else:
            v = np.where(forced, struct.payoff, np.maximum(struct.payoff, cont))
        if t in wanted:
            if mode is BudgetMode.EXACTLY:
                ch = exp_choice.copy()
            else:
                going = ~forced & (cont > struct.payoff)
                ch = np.where(going, exp_choice, STOP).astype(np.int32)
            out[t] = ValueFunction(grid, v.copy(), ch, eids)
    return out


def _grid_experiment_rows(policy, inst: Instance, grid: BeliefGrid):
    """Per-node total experiment rule (defined even where the policy stops)."""
    if hasattr(policy, "grid_experiments"):
        return policy.grid_experiments(inst, grid)
    rows = []
    for d in grid.nodes:
        rows.append(policy.experiment_distribution(float(d)))
    return rows
