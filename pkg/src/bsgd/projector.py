"""Scan geometries, Siddon ray tracing and explicit sparse system blocks.

Coordinates: the rotation centre sits at the origin and the reconstruction
grid spans ``[-K*s/2, K*s/2)`` along every axis (``s`` = voxel size).  At
angle ``theta`` the source sits at ``OP*(cos, sin[, 0])`` and the detector
centre at ``-OD*(cos, sin[, 0])``.  The in-plane detector axis is
``(-sin, cos[, 0])``; in cone-beam mode the second detector axis is ``z``.

Image vectors are C-ordered flattenings of arrays shaped ``(K, K)`` indexed
``[iy, ix]`` (2D) or ``(K, K, K)`` indexed ``[iz, iy, ix]`` (3D).  Row
``angle_index * rays_per_angle + element`` of the system matrix belongs to
detector element ``element`` (``iv * n + iu`` in 3D) at that angle.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DimensionError, GeometryError, PartitionError

MODES = ("fan2d", "cone3d")

# segments shorter than this fraction of the ray length are corner artefacts
_SEGMENT_RTOL = 1e-12


@dataclass(frozen=True)
class Geometry:
    mode: str
    source_to_center: float
    center_to_detector: float
    detector_elements: int
    detector_pitch: float
    angles: tuple
    volume_side: int
    voxel_size: float = 1.0

    @property
    def ndim(self):
        return 2 if self.mode == "fan2d" else 3

    @property
    def rays_per_angle(self):
        return self.detector_elements ** (self.ndim - 1)

    @property
    def n_angles(self):
        return len(self.angles)

    @property
    def n_rows(self):
        """Row count ``r`` of the system matrix."""
        return self.rays_per_angle * self.n_angles

    @property
    def n_cols(self):
        """Column count ``c`` of the system matrix."""
        return self.volume_side ** self.ndim

    @property
    def image_shape(self):
        return (self.volume_side,) * self.ndim

    @property
    def detector_shape(self):
        return (self.detector_elements,) * (self.ndim - 1)

    def angle_rows(self, angle_index):
        """Global row ids recorded at one projection angle."""
        start = angle_index * self.rays_per_angle
        return np.arange(start, start + self.rays_per_angle)

    def frame(self, theta_deg):
        """Return ``(source, detector_centre, axes)`` for one angle.

        ``axes`` holds the detector axis unit vectors, one per detector
        dimension.
        """
        t = np.deg2rad(theta_deg)
        c, s = np.cos(t), np.sin(t)
        if self.ndim == 2:
            e = np.array([c, s])
            axes = [np.array([-s, c])]
        else:
            e = np.array([c, s, 0.0])
            axes = [np.array([-s, c, 0.0]), np.array([0.0, 0.0, 1.0])]
        return self.source_to_center * e, -self.center_to_detector * e, axes

    def element_offsets(self):
        """Detector-axis coordinate of every element centre along one axis."""
        n = self.detector_elements
        return (np.arange(n) - (n - 1) / 2.0) * self.detector_pitch

    def ray_endpoints(self, rows):
        """Source and detector-element positions for global row ids."""
        rows = np.asarray(rows, dtype=np.int64)
        angle_idx, element = np.divmod(rows, self.rays_per_angle)
        theta = np.deg2rad(np.asarray(self.angles, dtype=float)[angle_idx])
        c, s = np.cos(theta), np.sin(theta)
        offs = self.element_offsets()
        OP, OD = self.source_to_center, self.center_to_detector
        if self.ndim == 2:
            u = offs[element]
            src = np.stack([OP * c, OP * s], axis=1)
            det = np.stack([-OD * c - u * s, -OD * s + u * c], axis=1)
        else:
            iv, iu = np.divmod(element, self.detector_elements)
            u, v = offs[iu], offs[iv]
            zeros = np.zeros_like(c)
            src = np.stack([OP * c, OP * s, zeros], axis=1)
            det = np.stack([-OD * c - u * s, -OD * s + u * c, v], axis=1)
        return src, det


def build_geometry(mode="fan2d", source_to_center=50.0, center_to_detector=50.0,
                   detector_elements=30, detector_pitch=1.0, angles=None,
                   volume_side=16, voxel_size=1.0):
    """Validate a scan description and freeze it into a :class:`Geometry`.

    ``angles`` is a sequence of degrees; it defaults to 0..350 in 10 degree
    steps.
    """
    if mode not in MODES:
        raise GeometryError(f"unknown geometry mode {mode!r}; expected one of {MODES}")
    if angles is None:
        angles = np.arange(0.0, 360.0, 10.0)
    angles = tuple(float(a) for a in np.atleast_1d(angles))
    if not angles:
        raise GeometryError("angle list is empty")
    if not (source_to_center > 0 and center_to_detector > 0):
        raise GeometryError("source and detector distances must be positive")
    if detector_pitch <= 0 or voxel_size <= 0:
        raise GeometryError("detector pitch and voxel size must be positive")
    if int(detector_elements) < 1 or int(volume_side) < 1:
        raise GeometryError("detector element and voxel counts must be >= 1")
    half_diag = np.sqrt(3.0 if mode == "cone3d" else 2.0) * volume_side * voxel_size / 2
    if source_to_center <= half_diag:
        raise GeometryError("source lies inside the reconstruction volume")
    return Geometry(mode, float(source_to_center), float(center_to_detector),
                    int(detector_elements), float(detector_pitch), angles,
                    int(volume_side), float(voxel_size))


def _trace_segments(geom, p0, p1):
    """Vectorised Siddon: voxel ids and lengths for a batch of segments.

    Returns ``(ray, col, length)`` arrays, ordered by ray and then by
    distance from the source.
    """
    ndim = geom.ndim
    K = geom.volume_side
    s = geom.voxel_size
    lo = -K * s / 2.0
    hi = K * s / 2.0
    d = p1 - p0
    length = np.linalg.norm(d, axis=1)
    n = p0.shape[0]

    with np.errstate(divide="ignore", invalid="ignore"):
        a_lo = (lo - p0) / d
        a_hi = (hi - p0) / d
    moving = d != 0
    a_enter = np.where(moving, np.minimum(a_lo, a_hi), -np.inf)
    a_exit = np.where(moving, np.maximum(a_lo, a_hi), np.inf)
    amin = np.maximum(a_enter.max(axis=1), 0.0)
    amax = np.minimum(a_exit.min(axis=1), 1.0)
    # half-open cells: a fixed coordinate must lie in [lo, hi)
    inside = np.all(moving | ((p0 >= lo) & (p0 < hi)), axis=1)
    hit = inside & (amax > amin)

    planes = lo + s * np.arange(K + 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        alphas = [(planes[None, :] - p0[:, a, None]) / d[:, a, None] for a in range(ndim)]
    alphas = np.concatenate(alphas + [amin[:, None], amax[:, None]], axis=1)
    alphas = np.where(np.isfinite(alphas), alphas, amin[:, None])
    alphas = np.clip(alphas, amin[:, None], amax[:, None])
    alphas.sort(axis=1)

    seg = np.diff(alphas, axis=1)
    mid = 0.5 * (alphas[:, 1:] + alphas[:, :-1])
    pos = p0[:, None, :] + mid[:, :, None] * d[:, None, :]
    idx = np.floor((pos - lo) / s).astype(np.int64)
    valid = (seg > _SEGMENT_RTOL) & hit[:, None] & np.all((idx >= 0) & (idx < K), axis=2)

    col = np.zeros(idx.shape[:2], dtype=np.int64)
    for a in range(ndim):
        # x is the fastest axis of the C-ordered image
        col += idx[:, :, a] * K ** a
    ray = np.broadcast_to(np.arange(n)[:, None], col.shape)
    return ray[valid], col[valid], (seg * length[:, None])[valid]


def siddon_trace(geom, ray_index):
    """Exact intersection lengths of one ray with the voxel grid.

    Returns ``(cols, lengths)`` sorted by column id; both are empty when
    the ray misses the volume.
    """
    if not 0 <= ray_index < geom.n_rows:
        raise IndexError(f"ray index {ray_index} outside [0, {geom.n_rows})")
    src, det = geom.ray_endpoints([ray_index])
    _, cols, lengths = _trace_segments(geom, src, det)
    order = np.argsort(cols, kind="stable")
    return cols[order], lengths[order]


def trace_rows(geom, rows, chunk=4096):
    """Trace many rays into a CSR matrix of shape ``(len(rows), c)``."""
    rows = np.asarray(rows, dtype=np.int64)
    parts_r, parts_c, parts_v = [], [], []
    for start in range(0, rows.size, chunk):
        src, det = geom.ray_endpoints(rows[start:start + chunk])
        ray, col, val = _trace_segments(geom, src, det)
        parts_r.append(ray + start)
        parts_c.append(col)
        parts_v.append(val)
    if parts_r:
        r, c, v = (np.concatenate(p) for p in (parts_r, parts_c, parts_v))
    else:
        r = c = np.zeros(0, dtype=np.int64)
        v = np.zeros(0)
    mat = sp.csr_matrix((v, (r, c)), shape=(rows.size, geom.n_cols))
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


def system_matrix(geom):
    """The full explicit system matrix ``A`` (desk scale only)."""
    return trace_rows(geom, np.arange(geom.n_rows))


@dataclass
class SparseBlock:
    """Sub-matrix ``A[row_ids][:, col_ids]`` stored in CSR form."""

    row_ids: np.ndarray
    col_ids: np.ndarray
    matrix: sp.csr_matrix
    _t: sp.csr_matrix = field(default=None, repr=False)

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def T(self):
        if self._t is None:
            self._t = self.matrix.T.tocsr()
        return self._t

    def restrict_rows(self, local_rows):
        """Block over a subset of this block's rows (local positions)."""
        local_rows = np.asarray(local_rows, dtype=np.int64)
        return SparseBlock(self.row_ids[local_rows], self.col_ids, self.matrix[local_rows])


def _check_index_set(ids, bound, what):
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise PartitionError(f"{what} index set must be a non-empty 1-D sequence")
    if ids.min() < 0 or ids.max() >= bound:
        raise PartitionError(f"{what} index outside [0, {bound})")
    if np.unique(ids).size != ids.size:
        raise PartitionError(f"{what} index set contains duplicates")
    return ids


def assemble_block(geom, I, J, A=None):
    """Assemble ``A_I^J``.

    With ``A`` given the block is sliced from the explicit matrix; without
    it the rows are re-traced (matrix-free mode).  Both give identical
    entries.
    """
    I = _check_index_set(I, geom.n_rows, "row")
    J = _check_index_set(J, geom.n_cols, "column")
    rows = A[I] if A is not None else trace_rows(geom, I)
    mat = rows[:, J].tocsr()
    mat.sort_indices()
    return SparseBlock(I, J, mat)


def forward_block(block, xJ, ledger=None):
    """Partial projection ``A_I^J @ x_J``."""
    xJ = np.asarray(xJ, dtype=float)
    m, n = block.shape
    if xJ.shape != (n,):
        raise DimensionError(f"block has {n} columns but x_J has shape {xJ.shape}")
    if ledger is not None:
        ledger.record_mult(m, n)
    return block.matrix @ xJ


def back_block(block, rI, ledger=None):
    """Partial back projection ``(A_I^J)^T @ r_I``."""
    rI = np.asarray(rI, dtype=float)
    m, n = block.shape
    if rI.shape != (m,):
        raise DimensionError(f"block has {m} rows but r_I has shape {rI.shape}")
    if ledger is not None:
        ledger.record_mult(m, n)
    return block.T @ rI
