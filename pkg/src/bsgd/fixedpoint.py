"""The block solver written as one affine recursion on ``(z, g_hat, x)``.

The stacked state is ``s = [z^1; ...; z^N; g^1; ...; g^M; x]`` (the same
memory layout as :class:`bsgd.solver.SolverState`), and one epoch with
fixed selections is ``s+ = Mat @ s + b``.  The gradient memories carry the
factor 2 of the block update, so the recursion reproduces the solver
exactly.  Everything here is a verification harness for tiny systems.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import SizeGuardError

MAX_COLUMNS = 256


@dataclass
class AugmentedSystem:
    A_bar: sp.csr_matrix      # (N r, c): block j holds A restricted to columns J_j
    A_T_bar: sp.csr_matrix    # (M c, r): block i holds A^T restricted to rows I_i
    I_bar_Nr: sp.csr_matrix   # (r, N r)
    I_bar_Mc: sp.csr_matrix   # (c, M c)
    R1: sp.dia_matrix
    R2: sp.dia_matrix
    R3: sp.dia_matrix
    matrix: sp.csr_matrix
    affine: np.ndarray

    def apply(self, s):
        return self.matrix @ s + self.affine


def _col_mask(n, ids):
    m = np.zeros(n)
    m[ids] = 1.0
    return m


def deformations(system):
    """``(A_bar, A_T_bar, I_bar_Nr, I_bar_Mc)`` for a partitioned system."""
    A = system.A.tocsr()
    r, c = A.shape
    A_bar = sp.vstack([A @ sp.diags(_col_mask(c, system.cols(j))) for j in range(system.N)]).tocsr()
    AT = A.T.tocsr()
    A_T_bar = sp.vstack([AT @ sp.diags(_col_mask(r, system.rows(i))) for i in range(system.M)]).tocsr()
    I_bar_Nr = sp.hstack([sp.identity(r)] * system.N).tocsr()
    I_bar_Mc = sp.hstack([sp.identity(c)] * system.M).tocsr()
    return A_bar, A_T_bar, I_bar_Nr, I_bar_Mc


def selection_masks(system, z_pairs, g_pairs, x_cols):
    """Diagonal 0/1 selection matrices from block selections.

    ``z_pairs``/``g_pairs`` are iterables of ``(i, j)`` block pairs whose
    z-memory entries (rows ``I_i`` of ``z^j``) or gradient-memory entries
    (columns ``J_j`` of ``g^i``) are refreshed; ``x_cols`` lists the column
    blocks of ``x`` that are updated.
    """
    r, c = system.shape
    d1 = np.zeros(system.N * r)
    for i, j in z_pairs:
        d1[j * r + system.rows(i)] = 1.0
    d2 = np.zeros(system.M * c)
    for i, j in g_pairs:
        d2[i * c + system.cols(j)] = 1.0
    d3 = np.zeros(c)
    for j in x_cols:
        d3[system.cols(j)] = 1.0
    return sp.diags(d1), sp.diags(d2), sp.diags(d3)


def build_recursion(system, mu, rows, cols, g_pairs=None, x_cols=None, max_columns=MAX_COLUMNS,
                    deform=None):
    """Assemble the recursion for one epoch with the given block selection.

    By default the three selections follow the block solver: z and gradient
    memories refresh every pair in ``rows x cols`` and ``x`` updates on
    ``cols``.  ``g_pairs`` / ``x_cols`` override the latter two to test
    selections that do not line up.
    """
    r, c = system.shape
    if c > max_columns:
        raise SizeGuardError(f"recursion harness limited to {max_columns} columns, got {c}; "
                             "it assembles (N r + M c + c)-sized operators")
    pairs = [(i, j) for i in rows for j in cols]
    g_pairs = pairs if g_pairs is None else list(g_pairs)
    x_cols = cols if x_cols is None else x_cols
    A_bar, A_T_bar, I_Nr, I_Mc = deform if deform is not None else deformations(system)
    R1, R2, R3 = selection_masks(system, pairs, g_pairs, x_cols)

    G = 2.0 * A_T_bar
    Inr = sp.identity(system.N * r)
    Imc = sp.identity(system.M * c)
    Ic = sp.identity(c)
    GI = R2 @ G @ I_Nr                      # R2 G I_Nr
    P = mu * R3 @ I_Mc                      # mu R3 I_Mc
    R1A = R1 @ A_bar
    mat = sp.bmat([
        [Inr - R1, None, R1A],
        [GI @ (R1 - Inr), Imc - R2, -(GI @ R1A)],
        [P @ GI @ (R1 - Inr), P @ (Imc - R2), Ic - P @ GI @ R1A],
    ]).tocsr()
    return AugmentedSystem(A_bar, A_T_bar, I_Nr, I_Mc, R1, R2, R3, mat, None)


def with_data(aug, y, mu):
    """Fill in the affine term for projection data ``y``."""
    Gy = aug.R2 @ (2.0 * (aug.A_T_bar @ y))
    aug.affine = np.concatenate([np.zeros(aug.A_bar.shape[0]), Gy, mu * (aug.R3 @ (aug.I_bar_Mc @ Gy))])
    return aug


def pack(z, g_hat, x):
    return np.concatenate([np.ravel(z), np.ravel(g_hat), x])


def unpack(system, s):
    r, c = system.shape
    nz, ng = system.N * r, system.M * c
    return s[:nz].reshape(system.N, r), s[nz:nz + ng].reshape(system.M, c), s[nz + ng:]


def stationary_state(system, y, x, deform=None):
    """The state of the form ``(A_bar x, 2 A_T_bar (y - A x), x)``."""
    A_bar, A_T_bar, _, _ = deform if deform is not None else deformations(system)
    return np.concatenate([A_bar @ x, 2.0 * (A_T_bar @ (y - system.A @ x)), x])


def random_selection(rng, system, aligned=True):
    """Random block selections: ``(rows, cols, g_pairs, x_cols)``.

    ``aligned`` draws one row set and one column set as the solver does;
    otherwise the z, gradient and image selections are drawn independently.
    """
    M, N = system.M, system.N

    def subset(n):
        k = int(rng.integers(1, n + 1))
        return np.sort(rng.choice(n, size=k, replace=False))

    rows, cols = subset(M), subset(N)
    if aligned:
        return rows, cols, None, None
    g_pairs = [(i, j) for i in range(M) for j in range(N) if rng.random() < 0.5] or [(0, 0)]
    return rows, cols, g_pairs, subset(N)


@dataclass
class FixedPointReport:
    max_rel_change: float
    max_abs_change: float
    trials: int
    aligned: bool

    def lines(self):
        mode = "aligned" if self.aligned else "independent"
        return [f"masks={mode} trials={self.trials} max_abs_change={self.max_abs_change:.3e} "
                f"max_rel_change={self.max_rel_change:.3e}"]


def verify_fixed_point(system, y, mu, x_star, trials=100, seed=0, aligned=True, x_offset=None):
    """Apply ``trials`` random one-epoch recursions to a candidate fixed point.

    The probed state is :func:`stationary_state` at ``x_star``; with
    ``x_offset`` the image part is moved to ``x_star + x_offset`` while the
    memories keep their stationary values.  Returns the largest absolute and
    relative (to ``||s||``) change observed.
    """
    rng = np.random.default_rng(seed)
    deform = deformations(system)
    s = stationary_state(system, y, x_star, deform)
    if x_offset is not None:
        s[s.size - x_star.size:] += x_offset
    norm = np.linalg.norm(s)
    worst_abs = 0.0
    for _ in range(trials):
        rows, cols, g_pairs, x_cols = random_selection(rng, system, aligned)
        aug = with_data(build_recursion(system, mu, rows, cols, g_pairs, x_cols, deform=deform), y, mu)
        worst_abs = max(worst_abs, float(np.linalg.norm(aug.apply(s) - s)))
    return FixedPointReport(worst_abs / norm, worst_abs, trials, aligned)
