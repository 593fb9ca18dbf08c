"""Multiscale raw descriptor for each particle.

At each scale n in (2, 4, 6, 8, 10, 12) the cube [-1,1]^3 (scaled by the
domain half-extent) is split into n^3 uniform cells; a particle's block is
[center of mass of its cell's particles (3), unit vector from the particle to
that center (3)].  Blocks concatenate in ascending scale order to a length-36
vector.  The descriptor is a fixed function of the input cloud: it does not
participate in the gradient tape.
"""

import numpy as np

from .errors import DimensionError

SCALES = (2, 4, 6, 8, 10, 12)
RAW_DESCRIPTOR_DIM = 6 * len(SCALES)

_ZERO_DIR_EPS = 1e-8


def cell_index(positions, n, half_extent=1.0):
    """Uniform-cell assignment: floor((x+e)/(2e) * n), clamped to [0, n-1]."""
    u = np.floor((positions + half_extent) / (2.0 * half_extent) * n).astype(np.int64)
    np.clip(u, 0, n - 1, out=u)
    return (u[:, 0] * n + u[:, 1]) * n + u[:, 2]


def multiscale_descriptor(positions, half_extent=1.0):
    """Per-particle descriptor [P, 36] from positions [P, 3] in the domain."""
    pos = np.asarray(positions)
    if pos.ndim != 2 or pos.shape[1] != 3:
        raise DimensionError(f"positions must be [P,3], got {pos.shape}")
    P = pos.shape[0]
    blocks = []
    for n in SCALES:
        flat = cell_index(pos, n, half_extent)
        counts = np.bincount(flat, minlength=n * n * n).astype(pos.dtype)
        centers_by_cell = np.stack(
            [
                np.bincount(flat, weights=pos[:, a], minlength=n * n * n)
                for a in range(3)
            ],
            axis=1,
        )
        occupied = np.maximum(counts, 1.0)
        centers_by_cell /= occupied[:, None]
        center = centers_by_cell[flat].astype(pos.dtype)
        delta = center - pos
        dist = np.linalg.norm(delta, axis=1)
        direction = np.zeros((P, 3), dtype=pos.dtype)
        moved = dist >= _ZERO_DIR_EPS
        direction[moved] = delta[moved] / dist[moved, None]
        blocks.append(center)
        blocks.append(direction)
    return np.concatenate(blocks, axis=1)
