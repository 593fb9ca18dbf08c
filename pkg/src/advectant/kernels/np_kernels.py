"""Pure-numpy kernel implementations.

Reference semantics for the numba kernels: same signatures, same reduction
order for scatter accumulation (particle-major, corner-minor, so results are
deterministic for a fixed particle order).
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

# Corner offsets of a cell, in the fixed order used by every kernel.
_CORNERS = np.array(
    [(a, b, c) for a in (0, 1) for b in (0, 1) for c in (0, 1)], dtype=np.int64
)


def stencil(pos, lo, inv_h, n):
    """Trilinear stencil: lower-corner cell index, local coordinate, face mask.

    Returns (base[P,3] int64 in [0, n-2], t[P,3] in [0,1], live[P,3]).
    ``live`` is 1 where the position is inside [lo, hi] on that axis (so the
    local coordinate moves with the position) and 0 where it was clamped.
    """
    hi = lo + (n - 1) / inv_h
    u = (pos - lo) * inv_h
    base = np.floor(u).astype(np.int64)
    np.clip(base, 0, n - 2, out=base)
    t = u - base
    live = ((pos >= lo) & (pos <= hi)).astype(pos.dtype)
    np.clip(t, 0.0, 1.0, out=t)
    return base, t, live


def _corner_weights(t):
    # [P,8] tensor-product weights in _CORNERS order
    wx = np.stack([1.0 - t[:, 0], t[:, 0]], axis=1)
    wy = np.stack([1.0 - t[:, 1], t[:, 1]], axis=1)
    wz = np.stack([1.0 - t[:, 2], t[:, 2]], axis=1)
    a, b, c = _CORNERS[:, 0], _CORNERS[:, 1], _CORNERS[:, 2]
    return wx[:, a] * wy[:, b] * wz[:, c]


def _corner_flat_index(base, n):
    a, b, c = _CORNERS[:, 0], _CORNERS[:, 1], _CORNERS[:, 2]
    ix = base[:, 0:1] + a[None, :]
    iy = base[:, 1:2] + b[None, :]
    iz = base[:, 2:3] + c[None, :]
    return (ix * n + iy) * n + iz  # [P,8]


def scatter(q, base, t, n):
    """p2g accumulation: out[c, i] += w_pk * q[p, c] over the 8 cell corners."""
    P, C = q.shape
    w = _corner_weights(t)
    idx = _corner_flat_index(base, n).reshape(-1)
    vals = (w[:, :, None] * q[:, None, :]).reshape(P * 8, C)
    flat = np.zeros((n * n * n, C), dtype=q.dtype)
    np.add.at(flat, idx, vals)
    return np.ascontiguousarray(flat.T.reshape(C, n, n, n))


def gather(field, base, t):
    """g2p interpolation: out[p, c] = sum_k w_pk * field[c, corner_k]."""
    C = field.shape[0]
    n = field.shape[1]
    w = _corner_weights(t)
    idx = _corner_flat_index(base, n)
    vals = field.reshape(C, -1)[:, idx]  # [C,P,8]
    return np.einsum("cpk,pk->pc", vals, w, optimize=True)


def _corner_grad_weights(t, live, inv_h):
    # d w_pk / d pos[p, axis], shape [P,8,3]
    wx = np.stack([1.0 - t[:, 0], t[:, 0]], axis=1)
    wy = np.stack([1.0 - t[:, 1], t[:, 1]], axis=1)
    wz = np.stack([1.0 - t[:, 2], t[:, 2]], axis=1)
    sign = np.array([-1.0, 1.0], dtype=t.dtype)
    dwx = sign[None, :] * (inv_h * live[:, 0:1])
    dwy = sign[None, :] * (inv_h * live[:, 1:2])
    dwz = sign[None, :] * (inv_h * live[:, 2:3])
    a, b, c = _CORNERS[:, 0], _CORNERS[:, 1], _CORNERS[:, 2]
    out = np.empty(t.shape[:1] + (8, 3), dtype=t.dtype)
    out[:, :, 0] = dwx[:, a] * wy[:, b] * wz[:, c]
    out[:, :, 1] = wx[:, a] * dwy[:, b] * wz[:, c]
    out[:, :, 2] = wx[:, a] * wy[:, b] * dwz[:, c]
    return out


def gather_grad_pos(field, base, t, live, gout, inv_h):
    """d<gout, gather>/d positions, shape [P,3]."""
    C = field.shape[0]
    n = field.shape[1]
    idx = _corner_flat_index(base, n)
    vals = field.reshape(C, -1)[:, idx]  # [C,P,8]
    s = np.einsum("cpk,pc->pk", vals, gout, optimize=True)
    dw = _corner_grad_weights(t, live, inv_h)
    return np.einsum("pk,pka->pa", s, dw, optimize=True)


def scatter_grad_pos(q, base, t, live, gfield, inv_h):
    """d<gfield, scatter>/d positions, shape [P,3]."""
    C = q.shape[1]
    n = gfield.shape[1]
    idx = _corner_flat_index(base, n)
    gvals = gfield.reshape(C, -1)[:, idx]  # [C,P,8]
    s = np.einsum("cpk,pc->pk", gvals, q, optimize=True)
    dw = _corner_grad_weights(t, live, inv_h)
    return np.einsum("pk,pka->pa", s, dw, optimize=True)


def _windows(padded):
    # [B,C,N,N,N,3,3,3] view over a zero-padded volume
    return sliding_window_view(padded, (3, 3, 3), axis=(2, 3, 4))


def _pad1(x):
    return np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1), (1, 1)))


def conv3d_fwd(x, k):
    """3x3x3 cross-correlation, stride 1, zero padding 1 (bias not included)."""
    B, Ci, N = x.shape[0], x.shape[1], x.shape[2]
    Co = k.shape[0]
    win = _windows(_pad1(x))
    col = win.transpose(0, 2, 3, 4, 1, 5, 6, 7).reshape(B * N * N * N, Ci * 27)
    y = col @ k.reshape(Co, Ci * 27).T
    return np.ascontiguousarray(
        y.reshape(B, N, N, N, Co).transpose(0, 4, 1, 2, 3)
    )


def conv3d_grad_x(gy, k):
    B, Co, N = gy.shape[0], gy.shape[1], gy.shape[2]
    Ci = k.shape[1]
    kf = k[:, :, ::-1, ::-1, ::-1]
    win = _windows(_pad1(gy))
    col = win.transpose(0, 2, 3, 4, 1, 5, 6, 7).reshape(B * N * N * N, Co * 27)
    kmat = kf.transpose(1, 0, 2, 3, 4).reshape(Ci, Co * 27)
    gx = col @ kmat.T
    return np.ascontiguousarray(
        gx.reshape(B, N, N, N, Ci).transpose(0, 4, 1, 2, 3)
    )


def conv3d_grad_k(gy, x):
    B, Co, N = gy.shape[0], gy.shape[1], gy.shape[2]
    Ci = x.shape[1]
    win = _windows(_pad1(x))
    col = win.transpose(0, 2, 3, 4, 1, 5, 6, 7).reshape(B * N * N * N, Ci * 27)
    gmat = gy.transpose(0, 2, 3, 4, 1).reshape(B * N * N * N, Co)
    return (gmat.T @ col).reshape(Co, Ci, 3, 3, 3)
