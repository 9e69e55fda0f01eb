"""The partitioned system: geometry, explicit matrix, blocks and tile weights."""

from functools import cached_property

import numpy as np

from .partition import make_partition, weight_table
from .projector import SparseBlock, assemble_block, system_matrix


class BlockSystem:
    """Explicit sparse blocks ``A_{I_i}^{J_j}`` addressable by ``(i, j)``.

    Blocks are sliced from the full matrix on first use and cached.
    """

    def __init__(self, geom, partition, A=None):
        self.geom = geom
        self.partition = partition
        self.A = system_matrix(geom) if A is None else A.tocsr()
        self._blocks = {}

    @classmethod
    def build(cls, geom, M, N, tiles_per_angle=4, row_unit="angle", A=None):
        return cls(geom, make_partition(geom, M, N, tiles_per_angle, row_unit), A)

    @property
    def M(self):
        return self.partition.M

    @property
    def N(self):
        return self.partition.N

    @property
    def shape(self):
        return self.A.shape

    def rows(self, i):
        return self.partition.row_blocks[i]

    def cols(self, j):
        return self.partition.col_blocks[j]

    def block(self, i, j):
        key = (i, j)
        if key not in self._blocks:
            self._blocks[key] = assemble_block(self.geom, self.rows(i), self.cols(j), A=self.A)
        return self._blocks[key]

    def full_block(self):
        return SparseBlock(np.arange(self.shape[0]), np.arange(self.shape[1]), self.A)

    @cached_property
    def weights(self):
        """Importance weights, shape ``(N, n_angles, tiles_per_angle)``."""
        return weight_table(self.geom, self.partition)

    def tile_local_rows(self, i, angle_pos, t):
        """Positions within row block ``i`` of tile ``t`` at its ``angle_pos``-th angle."""
        return angle_pos * self.geom.rays_per_angle + self.partition.tile_elements[t]
