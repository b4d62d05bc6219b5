"""Image grids of sources animated along principal motions."""
from __future__ import annotations

import numpy as np

from .mtaug import MotionBasis, animate

SCALES = (-1.0, 0.0, 1.0)


def compose_grid(cells: np.ndarray, background: float = 1.0) -> np.ndarray:
    """(rows, cols, h, w) cells to one image with a 1-px border around every cell."""
    rows, cols, h, w = cells.shape
    out = np.full((rows * (h + 2), cols * (w + 2)), background, dtype=np.float32)
    for r in range(rows):
        for c in range(cols):
            out[r * (h + 2) + 1:r * (h + 2) + 1 + h, c * (w + 2) + 1:c * (w + 2) + 1 + w] = cells[r, c]
    return out


def direction_motion(basis: MotionBasis, i: int, scale: float) -> np.ndarray:
    """``scale * sqrt(var_i) * v_i``: the whole unit of weight on one component."""
    return scale * np.sqrt(max(basis.variances[i], 0.0)) * basis.components[i]


def motion_grid(images: np.ndarray, model, basis: MotionBasis, directions: int = 3,
                scales=SCALES) -> np.ndarray:
    """Rows are source images; columns run over directions, each at every scale."""
    directions = min(directions, basis.n)
    images = np.asarray(images, dtype=np.float32)
    cols = [(d, s) for d in range(directions) for s in scales]
    cells = np.empty((len(images), len(cols)) + images.shape[1:], dtype=np.float32)
    for j, (d, s) in enumerate(cols):
        v = np.repeat(direction_motion(basis, d, s)[None], len(images), axis=0)
        cells[:, j] = animate(images, model, v)
    return compose_grid(cells)
