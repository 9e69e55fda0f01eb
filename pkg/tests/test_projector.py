import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bsgd.errors import DimensionError, GeometryError, PartitionError
from bsgd.projector import (assemble_block, back_block, build_geometry, forward_block, siddon_trace,
                            system_matrix, trace_rows)


def clipped_length(p0, p1, half):
    """Length of segment p0-p1 inside the box [-half, half]^d (Liang-Barsky)."""
    d = p1 - p0
    t0, t1 = 0.0, 1.0
    for a in range(p0.size):
        if d[a] == 0:
            if not -half <= p0[a] <= half:
                return 0.0
            continue
        lo, hi = sorted(((-half - p0[a]) / d[a], (half - p0[a]) / d[a]))
        t0, t1 = max(t0, lo), min(t1, hi)
    return max(0.0, t1 - t0) * np.linalg.norm(d)


def test_central_ray_crosses_one_row():
    # odd detector: the centre element at angle 0 is the ray y = 0, which lies in row 8
    geom = build_geometry(detector_elements=31, angles=[0.0], volume_side=16)
    cols, lengths = siddon_trace(geom, 15)
    assert np.array_equal(cols, 8 * 16 + np.arange(16))
    assert np.allclose(lengths, 1.0)


def test_diagonal_ray_lengths():
    geom = build_geometry(detector_elements=31, angles=[45.0], volume_side=4)
    cols, lengths = siddon_trace(geom, 15)
    # through the corners of the diagonal voxels: four full diagonals
    assert np.allclose(np.sort(lengths), np.full(4, np.sqrt(2)))
    assert np.array_equal(np.sort(cols), [0, 5, 10, 15])


def test_missing_ray_is_empty():
    geom = build_geometry(detector_elements=3, detector_pitch=40.0, angles=[0.0], volume_side=4,
                          source_to_center=10, center_to_detector=10)
    cols, lengths = siddon_trace(geom, 0)
    assert cols.size == 0 and lengths.size == 0


@settings(max_examples=60, deadline=None)
@given(theta=st.floats(0, 360), element=st.integers(0, 29))
def test_chord_length_2d(theta, element):
    geom = build_geometry(angles=[theta], volume_side=16)
    _, lengths = siddon_trace(geom, element)
    src, det = geom.ray_endpoints([element])
    assert np.isclose(lengths.sum(), clipped_length(src[0], det[0], 8.0), atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(theta=st.floats(0, 360), element=st.integers(0, 63))
def test_chord_length_3d(theta, element):
    geom = build_geometry("cone3d", 20, 20, 8, 1.5, [theta], 6)
    _, lengths = siddon_trace(geom, element)
    src, det = geom.ray_endpoints([element])
    assert np.isclose(lengths.sum(), clipped_length(src[0], det[0], 3.0), atol=1e-9)


def test_trace_rows_matches_single_traces():
    geom = build_geometry(angles=[0, 33, 90, 200], volume_side=8, detector_elements=12,
                          source_to_center=20, center_to_detector=20)
    A = system_matrix(geom).toarray()
    for row in range(geom.n_rows):
        cols, lengths = siddon_trace(geom, row)
        ref = np.zeros(geom.n_cols)
        ref[cols] = lengths
        assert np.allclose(A[row], ref, atol=1e-12)


def test_dense_forward_projection(fan16):
    geom, A = fan16
    from bsgd.phantoms import shepp_logan

    x = shepp_logan(16).values
    blk = assemble_block(geom, np.arange(geom.n_rows), np.arange(geom.n_cols), A=A)
    assert np.abs(forward_block(blk, x) - A.toarray() @ x).max() < 1e-10


def test_matrix_free_equals_sliced(fan16):
    geom, A = fan16
    rng = np.random.default_rng(1)
    I = np.sort(rng.choice(geom.n_rows, 120, replace=False))
    J = np.sort(rng.choice(geom.n_cols, 70, replace=False))
    a = assemble_block(geom, I, J, A=A).matrix
    b = assemble_block(geom, I, J).matrix
    assert abs(a - b).max() < 1e-12


def test_row_restriction(fan16):
    geom, A = fan16
    blk = assemble_block(geom, np.arange(60), np.arange(256), A=A)
    sub = blk.restrict_rows(np.array([3, 10, 59]))
    assert np.array_equal(sub.row_ids, [3, 10, 59])
    assert abs(sub.matrix - A[[3, 10, 59]]).max() == 0


def test_ledger_counts_products(fan16):
    from bsgd.cluster import CostLedger

    geom, A = fan16
    blk = assemble_block(geom, np.arange(30), np.arange(100), A=A)
    ledger = CostLedger()
    forward_block(blk, np.ones(100), ledger)
    back_block(blk, np.ones(30), ledger)
    assert ledger.block_mults == 2
    assert ledger.scalar_ops == 2 * 30 * 100
    assert ledger.bytes_moved == 2 * (30 + 100) * 4


def test_errors(fan16):
    geom, A = fan16
    blk = assemble_block(geom, np.arange(10), np.arange(20), A=A)
    with pytest.raises(DimensionError):
        forward_block(blk, np.ones(19))
    with pytest.raises(DimensionError):
        back_block(blk, np.ones(11))
    with pytest.raises(IndexError):
        siddon_trace(geom, geom.n_rows)
    with pytest.raises(PartitionError):
        assemble_block(geom, [0, 0, 1], [0])
    with pytest.raises(PartitionError):
        assemble_block(geom, [0], [geom.n_cols])
    with pytest.raises(PartitionError):
        assemble_block(geom, [], [0])


@pytest.mark.parametrize("kwargs", [
    {"mode": "parallel"},
    {"angles": []},
    {"source_to_center": 5.0},
    {"center_to_detector": 0.0},
    {"detector_pitch": -1.0},
    {"detector_elements": 0},
])
def test_geometry_validation(kwargs):
    with pytest.raises(GeometryError):
        build_geometry(**kwargs)


def test_geometry_sizes():
    geom = build_geometry()
    assert (geom.n_rows, geom.n_cols) == (1080, 256)
    cone = build_geometry("cone3d", 30, 30, 10, 1.0, [0, 90], 8)
    assert (cone.n_rows, cone.n_cols) == (200, 512)
    assert trace_rows(cone, np.arange(10)).shape == (10, 512)
