"""The numba kernels and the pure fallbacks must implement the same math.

SEQEXP_PURE_NUMPY=1 flips the whole package to the fallback path; these
tests exercise both implementations in-process.
"""

import numpy as np

from seqexp import _kernels
from seqexp.presets import example1_instance
from seqexp.solver import BeliefGrid, DpStructure, solve


def test_flag_reflects_environment():
    assert isinstance(_kernels.USING_NUMBA, bool)
    assert _kernels.PURE_NUMPY == (not _kernels.USING_NUMBA)


def test_gs_sweep_backends_agree():
    inst = example1_instance()
    grid = BeliefGrid(1e-2)
    struct = DpStructure(inst, grid)
    idx, w, qd = struct.packed()
    v1 = struct.payoff.copy()
    v2 = struct.payoff.copy()
    for fwd in (True, False, True):
        _kernels.gs_sweep(v1, struct.payoff, inst.rho, idx, w, qd, fwd)
        _kernels._gs_sweep_impl(v2, struct.payoff, inst.rho, idx, w, qd, fwd)
    np.testing.assert_allclose(v1, v2, rtol=0, atol=1e-13)


def test_solve_identical_under_fallback(monkeypatch):
    inst = example1_instance()
    grid = BeliefGrid(1e-2)
    v_fast, _ = solve(inst, grid, 1e-8)
    monkeypatch.setattr(_kernels, "gs_sweep", _kernels._gs_sweep_impl)
    v_slow, _ = solve(inst, grid, 1e-8)
    np.testing.assert_allclose(v_fast.values, v_slow.values, atol=1e-12)


def test_sde_paths_shape_and_clamp():
    paths = _kernels.sde_paths(0.9, 5.0, 1e-3, 200, 64, seed=1)
    assert paths.shape == (64, 201)
    assert paths.min() >= 0.0 and paths.max() <= 1.0
    np.testing.assert_allclose(paths[:, 0], 0.9)


def test_sde_exit_outputs():
    tau, hit, disc = _kernels.sde_first_exit(0.5, 0.3, 0.7, 2.0, 1.0,
                                             1e-3, 500, 100000, seed=2)
    assert tau.shape == hit.shape == disc.shape == (500,)
    assert set(np.unique(hit)).issubset({-1, 0, 1})
    np.testing.assert_allclose(disc, np.exp(-tau), rtol=1e-12)
