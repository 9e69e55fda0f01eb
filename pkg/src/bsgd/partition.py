"""Row/column block partitions, sub-detector tiles and sampling fractions."""

import logging
from dataclasses import dataclass
from fractions import Fraction
from itertools import product
from math import floor

import numpy as np
import shapely

from .errors import PartitionError

log = logging.getLogger(__name__)


def near_equal_factors(n, k):
    """Split ``n`` into ``k`` integer factors that are as close as possible.

    Factors come back in ascending order; ``near_equal_factors(8, 2)`` is
    ``(2, 4)`` and ``near_equal_factors(8, 3)`` is ``(2, 2, 2)``.
    """
    if k == 1:
        return (n,)
    best = None
    for d in range(1, n + 1):
        if n % d:
            continue
        rest = near_equal_factors(n // d, k - 1)
        cand = tuple(sorted((d,) + rest))
        if best is None or cand[-1] - cand[0] < best[-1] - best[0]:
            best = cand
    return best


@dataclass
class BlockPartition:
    """Disjoint row blocks, image tiles and per-angle detector tiles.

    ``tile_elements[t]`` lists the detector element ids (within one angle)
    of sub-detector tile ``t``; the same tiling is used at every angle.
    ``row_angles[i]`` lists the angle indices forming row block ``i`` (empty
    when rows were split without regard to angles).
    """

    row_blocks: list
    col_blocks: list
    tile_elements: list
    row_angles: list
    col_boxes: list
    row_unit: str = "angle"

    @property
    def M(self):
        return len(self.row_blocks)

    @property
    def N(self):
        return len(self.col_blocks)

    @property
    def tiles_per_angle(self):
        return len(self.tile_elements)

    def tile_rows(self, geom, angle_index, t):
        return angle_index * geom.rays_per_angle + self.tile_elements[t]

    def check(self, geom):
        """Raise :class:`PartitionError` unless both partitions are exact."""
        for blocks, total, what in ((self.row_blocks, geom.n_rows, "row"),
                                    (self.col_blocks, geom.n_cols, "column")):
            allids = np.concatenate(blocks)
            if allids.size != total or not np.array_equal(np.sort(allids), np.arange(total)):
                raise PartitionError(f"{what} blocks do not partition 0..{total - 1}")
        tiles = np.concatenate(self.tile_elements)
        if not np.array_equal(np.sort(tiles), np.arange(geom.rays_per_angle)):
            raise PartitionError("detector tiles do not partition the detector")


def _split_axes(shape, counts):
    return [np.array_split(np.arange(n), c) for n, c in zip(shape, counts)]


def make_partition(geom, M, N, tiles_per_angle=4, row_unit="angle"):
    """Partition the system of ``geom`` into ``M`` row and ``N`` column blocks.

    Row blocks hold whole projection angles dealt round-robin (block ``i``
    gets angles ``i, i+M, ...``), which also spreads remainder angles one
    per block from the first block on.  ``row_unit="row"`` instead cuts the
    rows into ``M`` contiguous chunks, as needed for partitions finer than
    one angle.  Column blocks are axis-aligned image tiles on a near-square
    (near-cubic) grid of ``N`` tiles.
    """
    M, N, T = int(M), int(N), int(tiles_per_angle)
    if min(M, N, T) < 1:
        raise PartitionError("M, N and tiles_per_angle must be positive")
    if row_unit == "angle":
        if M > geom.n_angles:
            raise PartitionError(f"M={M} exceeds the {geom.n_angles} projection angles")
        row_angles = [np.arange(i, geom.n_angles, M) for i in range(M)]
        row_blocks = [np.concatenate([geom.angle_rows(a) for a in angs]) for angs in row_angles]
    elif row_unit == "row":
        if M > geom.n_rows:
            raise PartitionError(f"M={M} exceeds the {geom.n_rows} rows")
        row_blocks = np.array_split(np.arange(geom.n_rows), M)
        row_angles = [np.zeros(0, dtype=np.int64) for _ in range(M)]
    else:
        raise PartitionError(f"unknown row unit {row_unit!r}")

    K = geom.volume_side
    if N > geom.n_cols:
        raise PartitionError(f"N={N} exceeds the {geom.n_cols} voxels")
    counts = near_equal_factors(N, geom.ndim)
    if max(counts) > K:
        raise PartitionError(f"cannot tile a side of {K} voxels into {max(counts)} pieces")
    idx = np.arange(geom.n_cols).reshape(geom.image_shape)
    lo = -K * geom.voxel_size / 2.0
    col_blocks, col_boxes = [], []
    for pieces in product(*_split_axes(geom.image_shape, counts)):
        sl = np.ix_(*pieces)
        col_blocks.append(np.sort(idx[sl].ravel()))
        # image axes are ordered (z,) y, x; boxes are stored as x, y(, z)
        bounds = [(lo + p[0] * geom.voxel_size, lo + (p[-1] + 1) * geom.voxel_size)
                  for p in reversed(pieces)]
        col_boxes.append(np.array(bounds))

    if T > geom.rays_per_angle:
        raise PartitionError(f"{T} tiles exceed the {geom.rays_per_angle} detector elements")
    det_idx = np.arange(geom.rays_per_angle).reshape(geom.detector_shape)
    tile_counts = near_equal_factors(T, geom.ndim - 1)
    tile_elements = [np.sort(det_idx[np.ix_(*pieces)].ravel())
                     for pieces in product(*_split_axes(geom.detector_shape, tile_counts))]

    part = BlockPartition(row_blocks, col_blocks, tile_elements, row_angles, col_boxes, row_unit)
    part.check(geom)
    return part


def _tile_rects(geom, part):
    """Detector-coordinate extent of each tile: array (T, ndim-1, 2)."""
    n, p = geom.detector_elements, geom.detector_pitch
    rects = []
    for els in part.tile_elements:
        coords = np.unravel_index(els, geom.detector_shape)
        # detector shape axes are (v, u); report as (u, v)
        ext = [((c.min() - n / 2.0) * p, (c.max() + 1 - n / 2.0) * p) for c in reversed(coords)]
        rects.append(ext)
    return np.array(rects)


def project_points(geom, theta_deg, pts):
    """Perspective projection of world points onto detector coordinates."""
    src, _, axes = geom.frame(theta_deg)
    e = src / geom.source_to_center
    mag = (geom.source_to_center + geom.center_to_detector) / (geom.source_to_center - pts @ e)
    return np.stack([mag * (pts @ a) for a in axes], axis=1)


def footprint_overlaps(geom, part, j, theta_deg):
    """Area (length in 2D) of column block ``j``'s footprint on each tile."""
    box = part.col_boxes[j]
    corners = np.array(list(product(*box)))
    uv = project_points(geom, theta_deg, corners)
    rects = _tile_rects(geom, part)
    if geom.ndim == 2:
        a, b = uv[:, 0].min(), uv[:, 0].max()
        return np.clip(np.minimum(b, rects[:, 0, 1]) - np.maximum(a, rects[:, 0, 0]), 0.0, None)
    hull = shapely.MultiPoint(uv).convex_hull
    return np.array([hull.intersection(shapely.box(r[0, 0], r[1, 0], r[0, 1], r[1, 1])).area
                     for r in rects])


def importance_weights(geom, part, j, theta_deg):
    """Tile-selection probabilities for column block ``j`` at one angle.

    Each tile's weight is proportional to how much of the block's projected
    bounding box lands on it.  Only the geometry is used, never the system
    matrix.
    """
    overlap = footprint_overlaps(geom, part, j, theta_deg)
    total = overlap.sum()
    if not total > 0:
        log.warning("column block %d projects off the detector at %.3g deg; using uniform "
                    "tile weights", j, theta_deg)
        return np.full(part.tiles_per_angle, 1.0 / part.tiles_per_angle)
    return overlap / total


def weight_table(geom, part):
    """Importance weights for every (column block, angle): shape (N, n_angles, T)."""
    return np.array([[importance_weights(geom, part, j, th) for th in geom.angles]
                     for j in range(part.N)])


@dataclass(frozen=True)
class SamplingFractions:
    alpha: Fraction
    gamma: Fraction

    def counts(self, M, N):
        """Number of row and column blocks drawn per epoch."""
        nr, nc = self.alpha * M, self.gamma * N
        if nr.denominator != 1 or nc.denominator != 1:
            raise PartitionError(f"alpha*M={nr} and gamma*N={nc} must be integers")
        return int(nr), int(nc)

    @classmethod
    def of(cls, alpha, gamma, M, N):
        """Fractions from explicit values, snapped to whole block counts."""
        return cls(Fraction(_round_count(alpha * M, M), M), Fraction(_round_count(gamma * N, N), N))


def _round_count(value, upper):
    # round half up, at least one block, at most all of them
    return int(min(upper, max(1, floor(float(value) + 0.5))))


def select_alpha_gamma(node_num, M, N):
    """The node-budget rule: ``gamma = min(1, nodes/N)``, ``alpha = nodes/(M N gamma)``."""
    if node_num < 1:
        raise PartitionError("node_num must be >= 1")
    gamma = min(Fraction(1), Fraction(node_num, N))
    alpha = Fraction(node_num) / (M * N * gamma)
    return SamplingFractions.of(alpha, gamma, M, N)
