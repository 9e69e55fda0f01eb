from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bsgd import solver
from bsgd.errors import DimensionError
from bsgd.partition import SamplingFractions
from bsgd.system import BlockSystem
from bsgd.tv import tv_prox


def fr(alpha, gamma):
    return SamplingFractions(Fraction(alpha), Fraction(gamma))


def test_init_state(problem16):
    system, _, y, _ = problem16
    st_ = solver.init_state(system, y, 1e-3)
    r, c = system.shape
    assert st_.x.shape == (c,) and not st_.x.any()
    assert st_.z.shape == (system.N, r) and st_.g_hat.shape == (system.M, c)
    assert np.array_equal(st_.r, y)
    assert st_.ledger.master_storage == system.N * r + system.M * c + r + c
    with pytest.raises(ValueError):
        solver.init_state(system, y, 0.0)
    with pytest.raises(DimensionError):
        solver.init_state(system, y[:-1], 1e-3)


@settings(max_examples=15, deadline=None)
@given(a=st.sampled_from([Fraction(1, 4), Fraction(1, 2), Fraction(1)]),
       g=st.sampled_from([Fraction(1, 2), Fraction(1)]), seed=st.integers(0, 1000))
def test_memory_invariants(problem16, a, g, seed):
    system, _, y, _ = problem16
    state = solver.init_state(system, y, 2.0 ** -11, seed=seed)
    for _ in range(5):
        solver.bsgd_epoch(state, system, fr(a, g))
        # the residual is always recomputed from the z memories
        assert np.allclose(state.r, y - state.z.sum(axis=0), atol=1e-12)
        assert np.allclose(state.g, state.g_hat.sum(axis=0), atol=1e-12)


def test_only_selected_blocks_touched(problem16):
    system, _, y, _ = problem16
    state = solver.init_state(system, y, 2.0 ** -11, seed=3)
    solver.bsgd_epoch(state, system, fr(Fraction(1, 4), Fraction(1, 2)))
    touched_g = [i for i in range(system.M) if state.g_hat[i].any()]
    assert len(touched_g) == 1
    i = touched_g[0]
    j = next(j for j in range(system.N) if state.x[system.cols(j)].any())
    assert set(np.flatnonzero(state.x)) <= set(system.cols(j))
    assert set(np.flatnonzero(state.g_hat[i])) <= set(system.cols(j))
    assert state.ledger.block_mults == 2


def test_full_selection_is_gradient_descent(problem16):
    system, _, y, _ = problem16
    A = system.A
    mu = 2.0 ** -11
    state = solver.init_state(system, y, mu)
    x = np.zeros(system.shape[1])
    for _ in range(30):
        solver.bsgd_epoch(state, system, fr(1, 1))
        x = x + mu * 2 * (A.T @ (y - A @ x))
    assert np.allclose(state.x, x, rtol=1e-12, atol=1e-12)


def test_single_tile_im_equals_plain(fan16, problem16):
    geom, A = fan16
    _, _, y, _ = problem16
    system = BlockSystem.build(geom, 4, 2, tiles_per_angle=1, A=A)
    f = fr(Fraction(1, 2), Fraction(1, 2))
    a = solver.init_state(system, y, 2.0 ** -11, seed=5)
    b = solver.init_state(system, y, 2.0 ** -11, seed=5)
    for _ in range(20):
        solver.bsgd_epoch(a, system, f)
        solver.bsgd_im_epoch(b, system, f)
    assert np.array_equal(a.x, b.x)
    assert a.ledger.snapshot() == b.ledger.snapshot()


def test_im_uses_one_tile_per_angle(fan16, problem16):
    geom, A = fan16
    _, _, y, _ = problem16
    system = BlockSystem.build(geom, 4, 2, tiles_per_angle=3, A=A)
    state = solver.init_state(system, y, 2.0 ** -11, seed=1)
    solver.bsgd_im_epoch(state, system, fr(Fraction(1, 4), Fraction(1, 2)))
    # 9 angles per row block, one 10-ray tile each, against a 128-voxel column block
    assert state.ledger.block_mults == 2
    assert state.ledger.scalar_ops == 2 * 9 * 10 * 128


def test_sample_tiles_distribution():
    rng = np.random.default_rng(0)
    probs = np.tile([0.1, 0.6, 0.0, 0.3], (20000, 1))
    counts = np.bincount(solver.sample_tiles(rng, probs), minlength=4) / 20000
    assert np.allclose(counts, [0.1, 0.6, 0.0, 0.3], atol=0.01)


def test_draw_blocks():
    rng = np.random.default_rng(0)
    assert np.array_equal(solver.draw_blocks(rng, 5, 5), np.arange(5))
    ids = solver.draw_blocks(rng, 10, 4)
    assert len(set(ids)) == 4 and np.all(np.diff(ids) > 0)


@pytest.mark.parametrize("alpha, gamma, period", [
    (Fraction(1, 20), Fraction(1, 2), 40),
    (Fraction(1, 2), Fraction(1, 2), 4),
    (Fraction(1), Fraction(1), 1),
    (Fraction(1, 3), Fraction(1, 2), 6),
])
def test_tv_period(alpha, gamma, period):
    assert solver.tv_period(fr(alpha, gamma)) == period


def test_tv_epoch_applies_prox_on_schedule(problem16):
    system, _, y, _ = problem16
    f = fr(Fraction(1, 2), Fraction(1, 2))
    a = solver.init_state(system, y, 2.0 ** -11, seed=2)
    b = solver.init_state(system, y, 2.0 ** -11, seed=2)
    lam = 5.0
    for k in range(1, 9):
        solver.bsgd_tv_epoch(a, system, f, lam)
        solver.bsgd_epoch(b, system, f)
        if k % 4 == 0:
            b.x = tv_prox(b.x, b.mu * lam, (16, 16))
        assert np.array_equal(a.x, b.x)


class _Stub:
    def __init__(self, mu, thetas=()):
        self.mu = mu
        self.theta_history = list(thetas)
        self.epoch = 10


@pytest.mark.parametrize("history, thetas, criteria, expected", [
    ([3.0, 2.0, 1.0], [], "1+2", 1.05),           # two decreases: grow
    ([1.0, 2.0, 3.0], [], "1", 0.6),              # two increases, criterion 1: shrink
    ([1.0, 2.0, 3.0], [0.9, 0.95], "1+2", 1.0),   # increases but a stable direction
    ([1.0, 2.0, 3.0], [0.9, 0.2], "1+2", 0.6),    # direction jumped by more than t1
    ([1.0, 2.0, 3.0], [-0.1], "1+2", 0.6),        # direction reversed (theta < t2)
    ([1.0, 2.0, 3.0], [None], "1+2", 1.0),        # zero direction: no decision
    ([1.0, 3.0, 2.0], [], "1", 1.0),              # mixed trend
    ([2.0, 1.0], [], "1", 1.0),                   # too short
])
def test_tune_step(history, thetas, criteria, expected):
    c = solver.TuningConstants(epsilon=0.05, delta=0.4, t1=0.5, t2=0.0, criteria=criteria)
    assert solver.tune_step(_Stub(1.0, thetas), c, history) == pytest.approx(expected)


def test_tuning_constants_validation():
    for kwargs in ({"epsilon": 0}, {"delta": 1.0}, {"period": 0}, {"criteria": "2"}):
        with pytest.raises(ValueError):
            solver.TuningConstants(**kwargs)


def test_track_tuning_checkpoints(problem16):
    system, _, y, _ = problem16
    state = solver.init_state(system, y, 2.0 ** -11, seed=0)
    c = solver.TuningConstants()
    for _ in range(12):
        solver.bsgd_epoch(state, system, fr(Fraction(1, 2), 1))
        solver.track_tuning(state, c, 4)
    # initial residual plus one entry per checkpoint at epochs 4, 8, 12
    assert len(state.residual_history) == 4
    assert len(state.eud_history) == 2 and len(state.theta_history) == 2


def test_workers_do_not_change_results(problem16):
    system, _, y, _ = problem16
    f = fr(Fraction(1, 2), Fraction(1, 2))
    a = solver.init_state(system, y, 2.0 ** -11, seed=9, workers=1)
    b = solver.init_state(system, y, 2.0 ** -11, seed=9, workers=6)
    for _ in range(25):
        solver.bsgd_epoch(a, system, f)
        solver.bsgd_epoch(b, system, f)
    assert np.array_equal(a.x, b.x)
    assert a.ledger.snapshot() == b.ledger.snapshot()


def test_converges_to_least_squares(problem16):
    system, _, y, x_lsq = problem16
    state = solver.init_state(system, y, 2.0 ** -11, seed=0)
    for _ in range(3000):
        solver.bsgd_epoch(state, system, fr(Fraction(1, 2), Fraction(1, 2)))
    assert np.linalg.norm(state.x - x_lsq) < 1e-2 * np.linalg.norm(x_lsq)
