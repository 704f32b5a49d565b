"""Hot numeric kernels with numba acceleration and a pure-numpy fallback.

Set SEQEXP_PURE_NUMPY=1 to force the fallback path (useful on platforms
without a working numba toolchain and for benchmarking the speedup; see
benchmarks/bench_kernels.py).
"""

from __future__ import annotations

import math
import os

import numpy as np

_FLAG = os.environ.get("SEQEXP_PURE_NUMPY", "").strip().lower()
PURE_NUMPY = _FLAG in ("1", "true", "yes", "on")

if not PURE_NUMPY:
    try:
        import numba
    except ImportError:  # pragma: no cover - exercised only without numba
        numba = None
        PURE_NUMPY = True
else:
    numba = None

USING_NUMBA = not PURE_NUMPY


def _gs_sweep_impl(v, payoff, rho, idx, w, qd, forward):
    """One in-place Gauss-Seidel sweep of the stopping Bellman operator.

    idx/w/qd are (n_exp, n_nodes, max_outcomes) arrays; padded outcome
    slots carry qd == 0. idx must stay within [0, n_nodes - 2] so the
    interpolation stencil idx, idx+1 is always valid.
    """
    n = v.shape[0]
    n_exp = idx.shape[0]
    n_out = idx.shape[2]
    start, stop, step = (0, n, 1) if forward else (n - 1, -1, -1)
    for i in range(start, stop, step):
        best = -1.0e300
        for e in range(n_exp):
            s = 0.0
            for x in range(n_out):
                p = qd[e, i, x]
                if p > 0.0:
                    j = idx[e, i, x]
                    ww = w[e, i, x]
                    s += p * ((1.0 - ww) * v[j] + ww * v[j + 1])
            if s > best:
                best = s
        cont = rho * best
        g = payoff[i]
        v[i] = g if g >= cont else cont


_EXIT_SHIFT = 0.5826  # zeta(1/2)/sqrt(2*pi) continuity correction


def _sde_exit_impl(delta0, lo, hi, sigma, r, dt, n_paths, max_steps, seed):
    """Euler-Maruyama first exit of d(delta) = sigma*delta*(1-delta) dW from (lo, hi).

    The thresholds are shifted inward by 0.5826 * local volatility *
    sqrt(dt), the standard continuity correction for discrete boundary
    monitoring; without it exit times carry an O(sqrt(dt)) positive bias.
    Returns (tau, hit_hi, disc) per path; paths still inside after
    max_steps carry hit_hi = -1.
    """
    np.random.seed(seed)
    sqdt = math.sqrt(dt)
    hi_eff = hi - _EXIT_SHIFT * sigma * hi * (1.0 - hi) * sqdt
    lo_eff = lo + _EXIT_SHIFT * sigma * lo * (1.0 - lo) * sqdt
    tau = np.empty(n_paths)
    hit = np.empty(n_paths, dtype=np.int8)
    disc = np.empty(n_paths)
    for p in range(n_paths):
        d = delta0
        t = 0.0
        out = -1
        for _ in range(max_steps):
            z = np.random.standard_normal()
            d += sigma * d * (1.0 - d) * sqdt * z
            if d < 0.0:
                d = 0.0
            elif d > 1.0:
                d = 1.0
            t += dt
            if d >= hi_eff:
                out = 1
                break
            if d <= lo_eff:
                out = 0
                break
        tau[p] = t
        hit[p] = out
        disc[p] = math.exp(-r * t)
    return tau, hit, disc


def _sde_paths_impl(delta0, sigma, dt, n_steps, n_paths, seed):
    """Euler-Maruyama paths of the belief diffusion, clamped to [0, 1]."""
    np.random.seed(seed)
    out = np.empty((n_paths, n_steps + 1))
    sqdt = math.sqrt(dt)
    for p in range(n_paths):
        d = delta0
        out[p, 0] = d
        for k in range(n_steps):
            z = np.random.standard_normal()
            d += sigma * d * (1.0 - d) * sqdt * z
            if d < 0.0:
                d = 0.0
            elif d > 1.0:
                d = 1.0
            out[p, k + 1] = d
    return out


if USING_NUMBA:
    gs_sweep = numba.njit(cache=True)(_gs_sweep_impl)
    _sde_exit = numba.njit(cache=True)(_sde_exit_impl)
    _sde_paths = numba.njit(cache=True)(_sde_paths_impl)
else:
    gs_sweep = _gs_sweep_impl

    def _sde_exit(delta0, lo, hi, sigma, r, dt, n_paths, max_steps, seed):
        # Lockstep vectorized fallback: evolve all live paths together.
        rng = np.random.RandomState(seed)
        sqdt = math.sqrt(dt)
        hi = hi - _EXIT_SHIFT * sigma * hi * (1.0 - hi) * sqdt
        lo = lo + _EXIT_SHIFT * sigma * lo * (1.0 - lo) * sqdt
        d = np.full(n_paths, delta0)
        tau = np.zeros(n_paths)
        hit = np.full(n_paths, -1, dtype=np.int8)
        alive = np.ones(n_paths, dtype=bool)
        t = 0.0
        for _ in range(max_steps):
            if not alive.any():
                break
            z = rng.standard_normal(n_paths)
            da = d[alive]
            da = np.clip(da + sigma * da * (1.0 - da) * sqdt * z[alive], 0.0, 1.0)
            d[alive] = da
            t += dt
            tau[alive] = t
            idx = np.flatnonzero(alive)
            up = da >= hi
            down = da <= lo
            hit[idx[up]] = 1
            hit[idx[down]] = 0
            alive[idx[up | down]] = False
        return tau, hit, np.exp(-r * tau)

    def _sde_paths(delta0, sigma, dt, n_steps, n_paths, seed):
        rng = np.random.RandomState(seed)
        out = np.empty((n_paths, n_steps + 1))
        out[:, 0] = delta0
        sqdt = math.sqrt(dt)
        d = np.full(n_paths, delta0)
        for k in range(n_steps):
            z = rng.standard_normal(n_paths)
            d = np.clip(d + sigma * d * (1.0 - d) * sqdt * z, 0.0, 1.0)
            out[:, k + 1] = d
        return out


def sde_first_exit(delta0, lo, hi, sigma, r, dt, n_paths, max_steps, seed):
    return _sde_exit(float(delta0), float(lo), float(hi), float(sigma),
                     float(r), float(dt), int(n_paths), int(max_steps), int(seed))


def sde_paths(delta0, sigma, dt, n_steps, n_paths, seed):
    return _sde_paths(float(delta0), float(sigma), float(dt),
                      int(n_steps), int(n_paths), int(seed))
