"""Reference solvers: SIRT, CAV, GD, GD-BB, SAG, SVRG, ISTA, FISTA and LSQR.

All methods use the same sign convention as the block solver: the update
direction is ``2 A^T (y - A x)``, so a step is ``x + mu * direction``.
Whole-matrix products are charged to the ledger as ``M*N`` block
multiplications so costs line up with the block solver's counts.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .cluster import CostLedger
from .solver import draw_blocks
from .tv import tv_prox

log = logging.getLogger(__name__)

CLASSICAL = ("SIRT", "CAV", "GD", "GD-BB")
STOCHASTIC = ("SAG", "SVRG")
PROXIMAL = ("ISTA", "FISTA")


@dataclass
class BaselineState:
    x: np.ndarray
    step: float
    k: int = 0
    memory: dict = field(default_factory=dict)
    ledger: CostLedger = field(default_factory=CostLedger)
    rng: np.random.Generator | None = None


def init_baseline(n_cols, step, seed=None, ledger=None):
    return BaselineState(x=np.zeros(n_cols), step=float(step),
                         ledger=ledger if ledger is not None else CostLedger(),
                         rng=np.random.default_rng(seed))


def _charge_full(state, system, passes):
    """Charge ``passes`` whole-matrix products in block units."""
    for _ in range(passes):
        for i in range(system.M):
            m = len(system.rows(i))
            for j in range(system.N):
                state.ledger.record_mult(m, len(system.cols(j)))


def _direction(A, y, x):
    return 2.0 * (A.T @ (y - A @ x))


def _inv(v):
    out = np.zeros_like(v, dtype=float)
    nz = v != 0
    out[nz] = 1.0 / v[nz]
    return out


def classical_step(method, state, system, y, relaxation=1.0):
    """One iteration of a whole-image method.

    * ``SIRT``: ``x += w C A^T R (y - A x)`` with ``R``/``C`` the inverse row
      and column sums of ``A``.
    * ``CAV``: ``x += w A^T D (y - A x)`` with
      ``D_ii = 1 / sum_j s_j a_ij^2`` and ``s_j`` the number of non-zeros in
      column ``j``.
    * ``GD``: ``x += step * 2 A^T (y - A x)``.
    * ``GD-BB``: gradient descent with the Barzilai-Borwein step
      ``<s, s> / <s, d>`` (``s``, ``d`` = differences of successive iterates
      and gradients), starting from ``state.step``.
    """
    A = system.A
    x = state.x
    mem = state.memory
    if method == "SIRT":
        if "R" not in mem:
            mem["R"] = _inv(np.asarray(A.sum(axis=1)).ravel())
            mem["C"] = _inv(np.asarray(A.sum(axis=0)).ravel())
        state.x = x + relaxation * mem["C"] * (A.T @ (mem["R"] * (y - A @ x)))
    elif method == "CAV":
        if "D" not in mem:
            s = np.diff(A.tocsc().indptr).astype(float)
            mem["D"] = _inv(np.asarray(A.multiply(A) @ s).ravel())
        state.x = x + relaxation * (A.T @ (mem["D"] * (y - A @ x)))
    elif method == "GD":
        state.x = x + state.step * _direction(A, y, x)
    elif method == "GD-BB":
        d = _direction(A, y, x)
        grad = -d
        if "x_prev" in mem:
            s = x - mem["x_prev"]
            dg = grad - mem["grad_prev"]
            denom = s @ dg
            if denom > 0:
                state.step = float(s @ s / denom)
            else:
                log.warning("Barzilai-Borwein denominator %.3g not positive; keeping step %.3g",
                            denom, state.step)
        mem["x_prev"], mem["grad_prev"] = x.copy(), grad
        state.x = x + state.step * d
    else:
        raise ValueError(f"unknown classical method {method!r}")
    _charge_full(state, system, 2)
    state.k += 1
    return state


def _row_block_direction(state, system, y, i, x):
    """``2 A_{I_i}^T (y_{I_i} - A_{I_i} x)``, charged as N forward and N back products."""
    rows = system.rows(i)
    Ai = system.A[rows]
    m = len(rows)
    for _ in range(2):
        for j in range(system.N):
            state.ledger.record_mult(m, len(system.cols(j)))
    return 2.0 * (Ai.T @ (y[rows] - Ai @ x))


def stochastic_epoch(method, state, system, y, batch=1):
    """One epoch of SAG or SVRG over the row blocks of ``system``.

    SAG refreshes ``batch`` stored row-block gradients (drawn without
    replacement, ids sorted) and steps along their sum.  SVRG draws one row
    block per inner step and refreshes its anchor and full gradient every
    ``M`` inner steps; its estimate ``M (g_i(x) - g_i(anchor)) + g(anchor)``
    is unbiased for the full direction.
    """
    M = system.M
    mem = state.memory
    if method == "SAG":
        if "table" not in mem:
            mem["table"] = np.zeros((M, state.x.size))
        picked = draw_blocks(state.rng, M, batch)
        for i in picked:
            mem["table"][i] = _row_block_direction(state, system, y, i, state.x)
        state.x = state.x + state.step * mem["table"].sum(axis=0)
    elif method == "SVRG":
        if state.k % M == 0:
            mem["anchor"] = state.x.copy()
            mem["anchor_dir"] = _direction(system.A, y, state.x)
            _charge_full(state, system, 2)
        i = int(state.rng.integers(M))
        gi = _row_block_direction(state, system, y, i, state.x)
        gi_anchor = _row_block_direction(state, system, y, i, mem["anchor"])
        state.x = state.x + state.step * (M * (gi - gi_anchor) + mem["anchor_dir"])
    else:
        raise ValueError(f"unknown stochastic method {method!r}")
    state.k += 1
    return state


def fista_t_next(t):
    return (1.0 + np.sqrt(1.0 + 4.0 * t * t)) / 2.0


def prox_step(method, state, system, y, lam, prox_iters=20, prox_tol=1e-4):
    """One ISTA or FISTA iteration on ``||y - A x||^2 + 2 lam TV(x)``.

    FISTA keeps ``t`` (starting at 1) and the previous iterate; the
    gradient step is taken at the extrapolated point.
    """
    A = system.A
    shape = system.geom.image_shape
    mem = state.memory
    if method == "ISTA":
        v = state.x
    elif method == "FISTA":
        if "t" not in mem:
            mem["t"], mem["x_prev"], mem["v"] = 1.0, state.x.copy(), state.x.copy()
        v = mem["v"]
    else:
        raise ValueError(f"unknown proximal method {method!r}")
    x_new = v + state.step * _direction(A, y, v)
    if lam > 0:
        x_new = tv_prox(x_new, state.step * lam, shape, iters=prox_iters, tol=prox_tol)
    if method == "FISTA":
        t = mem["t"]
        t_next = fista_t_next(t)
        mem["v"] = x_new + ((t - 1.0) / t_next) * (x_new - mem["x_prev"])
        mem["t"], mem["x_prev"] = t_next, x_new
    state.x = x_new
    _charge_full(state, system, 2)
    state.k += 1
    return state


@dataclass
class LsqrResult:
    x: np.ndarray
    converged: bool
    iterations: int
    normal_residual: float


def lsqr_solve(A, y, tol=1e-10, max_iters=None):
    """Least-squares solution of ``A x ~ y`` started from zero (minimum norm
    when ``A`` is rank deficient).

    ``converged`` reports ``||A^T (y - A x)|| <= tol ||A^T y||``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    y = np.asarray(y, dtype=float)
    max_iters = max_iters or 20 * min(A.shape)
    out = spla.lsqr(A, y, atol=1e-16, btol=1e-16, conlim=1e16, iter_lim=max_iters)
    x, iters = out[0], out[2]
    nres = float(np.linalg.norm(A.T @ (y - A @ x)))
    converged = nres <= tol * np.linalg.norm(A.T @ y)
    if not converged:
        log.warning("LSQR stopped after %d iterations with normal residual %.3g", iters, nres)
    return LsqrResult(x, bool(converged), int(iters), nres)
