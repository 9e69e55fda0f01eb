"""Block stochastic gradient descent: plain, importance-sampled and TV.

Each ``*_epoch`` function advances a :class:`SolverState` by one outer
iteration (one random draw of row and column blocks).  Block tasks within a
phase write disjoint slices of the memories, so they may run on a thread
pool; aggregation always runs in block-index order and results do not
depend on the worker count.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cluster import CostLedger, master_storage
from .errors import DimensionError
from .projector import back_block, forward_block
from .tv import tv_prox

log = logging.getLogger(__name__)


@dataclass
class TuningConstants:
    """Step-length tuning constants.

    ``criteria`` is ``"1"`` (residual trend only) or ``"1+2"`` (residual
    trend plus the effective-update-direction angle test for decreases).
    ``period`` of ``None`` means the number of row blocks ``M``.
    """

    epsilon: float = 0.05
    delta: float = 0.4
    t1: float = 0.5
    t2: float = 0.0
    period: int | None = None
    criteria: str = "1+2"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.period is not None and self.period < 1:
            raise ValueError("period must be >= 1")
        if self.criteria not in ("1", "1+2"):
            raise ValueError(f"unknown criteria {self.criteria!r}")


@dataclass
class SolverState:
    x: np.ndarray
    z: np.ndarray
    g_hat: np.ndarray
    r: np.ndarray
    y: np.ndarray
    mu: float
    rng: np.random.Generator
    ledger: CostLedger
    epoch: int = 0
    g: np.ndarray | None = None
    eud_accum: np.ndarray | None = None
    eud_history: list = field(default_factory=list)
    theta_history: list = field(default_factory=list)
    residual_history: list = field(default_factory=list)
    workers: int = 1


def init_state(system, y, mu0, seed=0, workers=1, ledger=None):
    """Zero image, zero memories and ``r = y``."""
    if not mu0 > 0:
        raise ValueError("initial step length must be positive")
    y = np.asarray(y, dtype=float)
    r_rows, c = system.shape
    if y.shape != (r_rows,):
        raise DimensionError(f"y has shape {y.shape}, expected ({r_rows},)")
    if ledger is None:
        ledger = CostLedger()
    ledger.master_storage = master_storage(system.M, system.N, r_rows, c)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return SolverState(
        x=np.zeros(c), z=np.zeros((system.N, r_rows)), g_hat=np.zeros((system.M, c)),
        r=y.copy(), y=y, mu=float(mu0), rng=rng, ledger=ledger, g=np.zeros(c),
        eud_accum=np.zeros(c), residual_history=[float(np.linalg.norm(y))], workers=workers,
    )


def draw_blocks(rng, total, count):
    """``count`` distinct block ids in increasing order.

    Drawing all blocks consumes no randomness, so a full selection on one
    axis leaves the stream untouched for the other.
    """
    if count >= total:
        return np.arange(total)
    return np.sort(rng.choice(total, size=count, replace=False))


def select(state, system, fractions):
    n_rows, n_cols = fractions.counts(system.M, system.N)
    rows = draw_blocks(state.rng, system.M, n_rows)
    cols = draw_blocks(state.rng, system.N, n_cols)
    return rows, cols


def _map(state, fn, items):
    if state.workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=state.workers) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def _apply_blocks(state, system, tasks):
    """Shared body of one epoch; ``tasks`` holds ``(i, j, block, local_rows)``.

    ``local_rows`` indexes rows of ``system.rows(i)`` covered by ``block``.
    """
    def fp(task):
        i, j, blk, local = task
        return forward_block(blk, state.x[system.cols(j)], state.ledger)

    for (i, j, blk, local), zij in zip(tasks, _map(state, fp, tasks)):
        state.z[j, system.rows(i)[local]] = zij

    state.r = state.y - state.z.sum(axis=0)

    def bp(task):
        i, j, blk, local = task
        return back_block(blk, state.r[system.rows(i)[local]], state.ledger)

    for (i, j, blk, local), gij in zip(tasks, _map(state, bp, tasks)):
        state.g_hat[i, system.cols(j)] = 2.0 * gij

    state.g = state.g_hat.sum(axis=0)
    for j in sorted({t[1] for t in tasks}):
        cols = system.cols(j)
        state.x[cols] += state.mu * state.g[cols]
    state.epoch += 1
    return state


def bsgd_epoch(state, system, fractions):
    """One epoch of plain BSGD on the blocks chosen by ``fractions``."""
    rows, cols = select(state, system, fractions)
    tasks = []
    for i in rows:
        full = np.arange(len(system.rows(i)))
        tasks.extend((i, j, system.block(i, j), full) for j in cols)
    return _apply_blocks(state, system, tasks)


def sample_tiles(rng, probs):
    """One tile index per row of ``probs`` by inverse-CDF sampling."""
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0]) * cdf[:, -1]
    return np.minimum((cdf < u[:, None]).sum(axis=1), probs.shape[1] - 1)


def bsgd_im_epoch(state, system, fractions, uniform=False):
    """One BSGD epoch using one sampled detector tile per angle.

    For each selected block pair and each angle of the row block, a tile is
    drawn with probability given by the importance weights (or uniformly
    when ``uniform`` is set); only the rows of the drawn tiles enter the
    forward and back projections.
    """
    part = system.partition
    if part.row_unit != "angle":
        raise ValueError("importance sampling needs row blocks made of whole angles")
    T = part.tiles_per_angle
    rows, cols = select(state, system, fractions)
    tasks = []
    for i in rows:
        angles = part.row_angles[i]
        for j in cols:
            if T == 1:
                picks = np.zeros(len(angles), dtype=np.int64)
            else:
                probs = (np.full((len(angles), T), 1.0 / T) if uniform
                         else system.weights[j, angles])
                picks = sample_tiles(state.rng, probs)
            local = np.concatenate([system.tile_local_rows(i, k, t) for k, t in enumerate(picks)])
            blk = system.block(i, j)
            if T > 1:
                blk = blk.restrict_rows(local)
            tasks.append((i, j, blk, local))
    return _apply_blocks(state, system, tasks)


def tv_period(fractions):
    """Epochs between TV prox steps: ``1/(alpha*gamma)`` rounded to an integer."""
    return max(1, round(1 / (fractions.alpha * fractions.gamma)))


def bsgd_tv_epoch(state, system, fractions, lam, prox_iters=20, prox_tol=1e-4):
    """BSGD epoch followed, every :func:`tv_period` epochs, by a TV prox step."""
    bsgd_epoch(state, system, fractions)
    if state.epoch % tv_period(fractions) == 0:
        state.x = tv_prox(state.x, state.mu * lam, system.geom.image_shape,
                          iters=prox_iters, tol=prox_tol)
    return state


def _cosine(a, b):
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return None
    return float(a @ b / (na * nb))


def tune_step(state, constants, residual_history):
    """Return the step length after one tuning checkpoint.

    ``residual_history`` holds ``||r||`` at the checkpoints so far (the last
    three are used).  Increase by ``1+epsilon`` after two consecutive
    decreases; decrease by ``1-delta`` after two consecutive increases,
    additionally requiring an unstable update direction when criterion 2 is
    active.  The angle data come from ``state.theta_history``.
    """
    mu = state.mu
    if len(residual_history) < 3:
        return mu
    r2, r1, r0 = residual_history[-3:]
    if r0 < r1 < r2:
        return (1 + constants.epsilon) * mu
    if r0 > r1 > r2:
        if constants.criteria == "1":
            return (1 - constants.delta) * mu
        theta = state.theta_history[-1] if state.theta_history else None
        if theta is None:
            log.warning("effective update direction has zero norm at epoch %d; "
                        "step decrease suppressed", state.epoch)
            return mu
        prev = state.theta_history[-2] if len(state.theta_history) > 1 else None
        jump = prev is not None and abs(theta - prev) > constants.t1
        if jump or theta < constants.t2:
            return (1 - constants.delta) * mu
    return mu


def track_tuning(state, constants, period):
    """Accumulate the update direction; at checkpoints record and tune.

    Call once after every epoch.  Returns ``True`` when ``mu`` changed.
    """
    state.eud_accum += state.g
    if state.epoch % period:
        return False
    eud = state.eud_accum
    state.eud_accum = np.zeros_like(eud)
    if state.eud_history:
        state.theta_history.append(_cosine(eud, state.eud_history[-1]))
        state.theta_history = state.theta_history[-2:]
    state.eud_history = (state.eud_history + [eud])[-2:]
    state.residual_history.append(float(np.linalg.norm(state.r)))
    if state.epoch <= period:
        return False
    old = state.mu
    state.mu = tune_step(state, constants, state.residual_history)
    return state.mu != old
