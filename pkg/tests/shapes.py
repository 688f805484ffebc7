"""Raster shape generators shared by the detection and acceptance tests."""

import numpy as np
from scipy import ndimage


def polyomino(rng, n_cells: int = 6, cell: int = 192) -> np.ndarray:
    """Random edge-connected union of ``n_cells`` square cells of ``cell`` px."""
    cells = {(0, 0)}
    while len(cells) < n_cells:
        c = list(cells)[rng.integers(len(cells))]
        d = [(1, 0), (-1, 0), (0, 1), (0, -1)][rng.integers(4)]
        cells.add((c[0] + d[0], c[1] + d[1]))
    c = np.array(sorted(cells))
    c -= c.min(axis=0)
    h, w = (c.max(axis=0) + 1) * cell
    m = np.zeros((h, w), bool)
    for r, k in c:
        m[r * cell:(r + 1) * cell, k * cell:(k + 1) * cell] = True
    return m


def l_mask(size: int = 64, t: int = 20) -> np.ndarray:
    m = np.zeros((size, size), bool)
    m[:, :t] = True
    m[-t:, :] = True
    return m


def transform_mask(mask, angle_deg: float = 0.0, scale: float = 1.0, shift=(0, 0)) -> np.ndarray:
    """Rotate and scale about the mask center (bilinear, threshold 0.5), then shift."""
    mask = np.pad(np.asarray(mask, bool), 4)
    h, w = mask.shape
    n = int(np.ceil(np.hypot(h, w) * scale)) + 8
    # Matching parity keeps pixel centers aligned under the identity.
    shape = (n + (n - h) % 2, n + (n - w) % 2)
    a = np.deg2rad(angle_deg)
    fwd = scale * np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
    inv = np.linalg.inv(fwd)
    out_c = (np.array(shape) - 1) / 2
    in_c = (np.array([h, w]) - 1) / 2
    img = ndimage.affine_transform(mask.astype(float), inv, offset=in_c - inv @ out_c,
                                   output_shape=shape, order=1)
    return np.pad(img >= 0.5, ((int(shift[0]), 0), (int(shift[1]), 0)))


def random_transform(rng):
    """Integer translation, rotation by a multiple of 15 deg, scale in [0.75, 2]."""
    return 15.0 * int(rng.integers(0, 24)), float(rng.uniform(0.75, 2.0)), tuple(rng.integers(0, 20, 2))
