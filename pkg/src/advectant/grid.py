"""Differentiable trilinear transfer between particles and a node-centered grid.

The grid covers a cube of half-extent ``e`` with ``n`` nodes per axis, spacing
``h = 2e/(n-1)``, so the domain corners are nodes.  Positions outside the
domain are clamped for stencil purposes only (their interpolation weights stop
moving, so the position gradient there is zero); the stored positions are
never modified.

Scatter results are deterministic for a fixed particle order: both kernel
backends accumulate particle-major, corner-minor.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DimensionError, InputError
from .tensor import Tensor, _make, div_bcast0, maximum_scalar, mul_rows

EMPTY_NODE_EPS = 1e-8


@dataclass(frozen=True)
class GridSpec:
    """Cubic node-centered grid: ``n`` nodes per axis over [-e, e]^3."""

    n: int = 16
    half_extent: float = 1.0

    def __post_init__(self):
        if self.n < 2:
            raise DimensionError(f"grid needs n >= 2 nodes per axis, got {self.n}")
        if self.half_extent <= 0:
            raise DimensionError("grid half extent must be positive")

    @property
    def lo(self) -> float:
        return -self.half_extent

    @property
    def h(self) -> float:
        return 2.0 * self.half_extent / (self.n - 1)

    def node_coords(self) -> np.ndarray:
        return self.lo + self.h * np.arange(self.n)


@dataclass
class GridField:
    """Channel vectors stored on grid nodes: values[C, n, n, n]."""

    spec: GridSpec
    values: Tensor

    def __post_init__(self):
        n = self.spec.n
        if self.values.ndim != 4 or self.values.shape[1:] != (n, n, n):
            raise DimensionError(
                f"grid field values {self.values.shape} do not match n={n}"
            )

    @property
    def channels(self) -> int:
        return self.values.shape[0]


def _as_pos_array(positions):
    pos = positions.data if isinstance(positions, Tensor) else np.asarray(positions)
    if pos.ndim != 2 or pos.shape[1] != 3:
        raise DimensionError(f"positions must be [P,3], got {pos.shape}")
    if not np.all(np.isfinite(pos)):
        raise InputError("positions contain non-finite values")
    return pos


def stencil(positions, spec):
    """Trilinear stencil for each particle: 8 corner node ids and weights.

    Returns (indices[P,8] flat node ids, weights[P,8]) as plain arrays.
    Weights of in-domain particles sum to 1.
    """
    pos = _as_pos_array(positions)
    base, t, _ = kernels.stencil(pos, pos.dtype.type(spec.lo),
                                 pos.dtype.type(1.0 / spec.h), spec.n)
    corners = np.array(
        [(a, b, c) for a in (0, 1) for b in (0, 1) for c in (0, 1)], dtype=np.int64
    )
    idx = (
        (base[:, 0:1] + corners[None, :, 0]) * spec.n + base[:, 1:2] + corners[None, :, 1]
    ) * spec.n + base[:, 2:3] + corners[None, :, 2]
    wx = np.stack([1.0 - t[:, 0], t[:, 0]], axis=1)
    wy = np.stack([1.0 - t[:, 1], t[:, 1]], axis=1)
    wz = np.stack([1.0 - t[:, 2], t[:, 2]], axis=1)
    w = (
        wx[:, corners[:, 0]] * wy[:, corners[:, 1]] * wz[:, corners[:, 2]]
    )
    return idx, w


def p2g_raw(quantity, positions, spec):
    """Unnormalized scatter: node value = sum_p w_ip * q_p.

    Differentiable w.r.t. the quantity and the positions.
    """
    pos = _as_pos_array(positions)
    if quantity.ndim != 2 or quantity.shape[0] != pos.shape[0]:
        raise DimensionError(
            f"quantity {quantity.shape} does not match positions {pos.shape}"
        )
    qd = quantity.data
    dt = pos.dtype.type
    inv_h = dt(1.0 / spec.h)
    base, t, live = kernels.stencil(pos, dt(spec.lo), inv_h, spec.n)
    field = kernels.scatter(qd, base, t, spec.n)

    def vjp(g):
        g = np.ascontiguousarray(g)
        gq = kernels.gather(g, base, t)
        gpos = None
        if positions.requires_grad:
            gpos = kernels.scatter_grad_pos(qd, base, t, live, g, inv_h)
        return gq, gpos

    values = _make(field, (quantity, positions), vjp)
    return GridField(spec, values)


def g2p(field, positions):
    """Gather: particle value = sum_i w_ip * node value.

    Differentiable w.r.t. the field values and the positions.
    """
    pos = _as_pos_array(positions)
    spec = field.spec
    fd = field.values.data
    dt = pos.dtype.type
    inv_h = dt(1.0 / spec.h)
    base, t, live = kernels.stencil(pos, dt(spec.lo), inv_h, spec.n)
    out = kernels.gather(fd, base, t)

    def vjp(g):
        g = np.ascontiguousarray(g)
        gf = kernels.scatter(g, base, t, spec.n)
        gpos = None
        if positions.requires_grad:
            gpos = kernels.gather_grad_pos(fd, base, t, live, g, inv_h)
        return gf, gpos

    return _make(out, (field.values, positions), vjp)


def p2g(features, positions, masses, spec):
    """Mass-weighted normalized scatter (classic PIC transfer).

    node value = sum_p w_ip m_p f_p / max(sum_p w_ip m_p, eps); nodes no
    particle touches come out exactly zero with zero gradient.
    """
    if masses.ndim != 1 or masses.shape[0] != features.shape[0]:
        raise DimensionError(
            f"masses {masses.shape} do not match features {features.shape}"
        )
    if np.any(masses.data <= 0):
        raise InputError("particle masses must be positive")
    weighted = mul_rows(features, masses)
    num = p2g_raw(weighted, positions, spec)
    mass_col = Tensor._raw(
        np.ascontiguousarray(masses.data[:, None]), masses.requires_grad
    )
    if masses.requires_grad:
        mass_col._parents = (masses,)
        mass_col._vjp = lambda g: (g[:, 0],)
    den = p2g_raw(mass_col, positions, spec)
    safe_den = maximum_scalar(den.values, EMPTY_NODE_EPS)
    return GridField(spec, div_bcast0(num.values, safe_den))
