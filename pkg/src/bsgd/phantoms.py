"""Test phantoms, projection noise and reconstruction quality metrics."""

from dataclasses import dataclass

import numpy as np

# Modified Shepp-Logan (Toft): intensity, semi-axes a, b, centre x0, y0, angle (deg).
SHEPP_LOGAN_2D = np.array([
    [1.0, 0.69, 0.92, 0.0, 0.0, 0.0],
    [-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0],
    [-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0],
    [-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0],
    [0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0],
    [0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0],
    [0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0],
    [0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0],
    [0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0],
    [0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0],
])

# 3D version of the table above: each ellipse becomes an ellipsoid with a z
# semi-axis and z offset.  Columns: intensity, a, b, c, x0, y0, z0, angle about z.
SHEPP_LOGAN_3D = np.array([
    [1.0, 0.6900, 0.920, 0.810, 0.0, 0.0, 0.0, 0.0],
    [-0.8, 0.6624, 0.874, 0.780, 0.0, -0.0184, 0.0, 0.0],
    [-0.2, 0.1100, 0.310, 0.220, 0.22, 0.0, 0.0, -18.0],
    [-0.2, 0.1600, 0.410, 0.280, -0.22, 0.0, 0.0, 18.0],
    [0.1, 0.2100, 0.250, 0.410, 0.0, 0.35, -0.15, 0.0],
    [0.1, 0.0460, 0.046, 0.050, 0.0, 0.1, 0.25, 0.0],
    [0.1, 0.0460, 0.046, 0.050, 0.0, -0.1, 0.25, 0.0],
    [0.1, 0.0460, 0.023, 0.050, -0.08, -0.605, 0.0, 0.0],
    [0.1, 0.0230, 0.023, 0.020, 0.0, -0.606, 0.0, 0.0],
    [0.1, 0.0230, 0.046, 0.020, 0.06, -0.605, 0.0, 0.0],
])


@dataclass
class Phantom:
    values: np.ndarray
    dims: tuple

    @property
    def image(self):
        return self.values.reshape(self.dims)


def _grid(K, ndim):
    # voxel centres in [-1, 1]; y grows with the row index, matching the projector
    c = (np.arange(K) + 0.5) / K * 2.0 - 1.0
    return np.meshgrid(*([c] * ndim), indexing="ij")[::-1]


def ellipse_mask(K, row):
    """Pixels of a ``K x K`` grid inside one 2D ellipse-table row."""
    x, y = _grid(K, 2)
    _, a, b, x0, y0, phi = row
    t = np.deg2rad(phi)
    xr = (x - x0) * np.cos(t) + (y - y0) * np.sin(t)
    yr = -(x - x0) * np.sin(t) + (y - y0) * np.cos(t)
    return (xr / a) ** 2 + (yr / b) ** 2 <= 1.0


def shepp_logan(K, dims=2):
    """Modified Shepp-Logan phantom sampled at voxel centres, clipped to [0, 1]."""
    if K < 4:
        raise ValueError("phantom side must be at least 4")
    if dims == 2:
        img = np.zeros((K, K))
        for row in SHEPP_LOGAN_2D:
            img[ellipse_mask(K, row)] += row[0]
    elif dims == 3:
        x, y, z = _grid(K, 3)
        img = np.zeros((K, K, K))
        for rho, a, b, c, x0, y0, z0, phi in SHEPP_LOGAN_3D:
            t = np.deg2rad(phi)
            xr = (x - x0) * np.cos(t) + (y - y0) * np.sin(t)
            yr = -(x - x0) * np.sin(t) + (y - y0) * np.cos(t)
            img[(xr / a) ** 2 + (yr / b) ** 2 + ((z - z0) / c) ** 2 <= 1.0] += rho
    else:
        raise ValueError("dims must be 2 or 3")
    img = np.clip(img, 0.0, 1.0)
    return Phantom(img.ravel(), img.shape)


def skull_cube(K, dims=3):
    """A hollow shell with a few inner blobs, standing in for a skull scan.

    Not a reproduction of any measured data set; only useful for comparing
    methods against each other.
    """
    grid = _grid(K, dims)
    r = np.sqrt(sum(g ** 2 for g in grid))
    img = np.where((r <= 0.85) & (r >= 0.7), 1.0, 0.0)
    img += np.where(r < 0.7, 0.15, 0.0)
    for centre, rad, val in (((0.3, 0.2), 0.15, 0.5), ((-0.3, -0.1), 0.2, 0.35), ((0.0, -0.4), 0.1, 0.7)):
        d2 = sum((g - c) ** 2 for g, c in zip(grid, centre))
        img[d2 <= rad ** 2] = val
    img = np.clip(img, 0.0, 1.0)
    return Phantom(img.ravel(), img.shape)


def add_noise(y, target_snr_db, seed):
    """White Gaussian noise scaled so ``20 log10(||y||/||e||)`` hits the target.

    ``target_snr_db=inf`` returns an unchanged copy.
    """
    y = np.asarray(y, dtype=float)
    ny = np.linalg.norm(y)
    if ny == 0:
        raise ValueError("cannot set an SNR relative to all-zero projections")
    if np.isinf(target_snr_db) and target_snr_db > 0:
        return y.copy()
    e = np.random.default_rng(seed).standard_normal(y.shape)
    e *= ny / (np.linalg.norm(e) * 10.0 ** (target_snr_db / 20.0))
    return y + e


def snr_db(reference, estimate):
    return 20.0 * np.log10(np.linalg.norm(reference) / np.linalg.norm(estimate - reference))


SNR_CAP_DB = 300.0


def compute_metrics(x_rec, x_true=None, x_lsq=None, A=None, y=None):
    """DS, SNR and GAP for one reconstruction; absent inputs give ``None``.

    An exact reconstruction has an infinite SNR; it is reported as
    :data:`SNR_CAP_DB` with ``snr_capped`` set.
    """
    out = {"DS": None, "SNR": None, "GAP": None, "snr_capped": False}
    if x_lsq is not None:
        out["DS"] = float(np.linalg.norm(x_rec - x_lsq))
    if x_true is not None:
        err = np.linalg.norm(x_rec - x_true)
        if err == 0:
            out["SNR"], out["snr_capped"] = SNR_CAP_DB, True
        else:
            out["SNR"] = float(20.0 * np.log10(np.linalg.norm(x_true) / err))
    if A is not None and y is not None:
        out["GAP"] = float(np.linalg.norm(y - A @ x_rec))
    return out


def effective_epochs(epochs, fractions):
    """Epoch count scaled by the fraction of blocks touched per epoch."""
    return epochs * float(fractions.alpha * fractions.gamma)
