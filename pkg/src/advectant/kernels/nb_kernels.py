"""Numba @njit kernels.

Signatures and reduction order mirror np_kernels exactly; scatter accumulates
particle-major then corner-minor so both backends are deterministic for a
fixed particle order.  Compiled lazily per dtype and cached on disk.
"""

import numpy as np
from numba import njit, prange


@njit(cache=True)
def stencil(pos, lo, inv_h, n):
    P = pos.shape[0]
    hi = lo + (n - 1) / inv_h
    base = np.empty((P, 3), dtype=np.int64)
    t = np.empty((P, 3), dtype=pos.dtype)
    live = np.empty((P, 3), dtype=pos.dtype)
    for p in range(P):
        for a in range(3):
            u = (pos[p, a] - lo) * inv_h
            b = int(np.floor(u))
            if b < 0:
                b = 0
            elif b > n - 2:
                b = n - 2
            tt = u - b
            if tt < 0.0:
                tt = 0.0
            elif tt > 1.0:
                tt = 1.0
            base[p, a] = b
            t[p, a] = tt
            live[p, a] = 1.0 if (pos[p, a] >= lo and pos[p, a] <= hi) else 0.0
    return base, t, live


@njit(cache=True)
def scatter(q, base, t, n):
    P, C = q.shape
    out = np.zeros((C, n, n, n), dtype=q.dtype)
    for p in range(P):
        bx, by, bz = base[p, 0], base[p, 1], base[p, 2]
        tx, ty, tz = t[p, 0], t[p, 1], t[p, 2]
        for a in range(2):
            wx = tx if a == 1 else 1.0 - tx
            for b in range(2):
                wy = ty if b == 1 else 1.0 - ty
                for c in range(2):
                    wz = tz if c == 1 else 1.0 - tz
                    w = wx * wy * wz
                    for ch in range(C):
                        out[ch, bx + a, by + b, bz + c] += w * q[p, ch]
    return out


@njit(cache=True, parallel=True)
def gather(field, base, t):
    C = field.shape[0]
    P = base.shape[0]
    out = np.zeros((P, C), dtype=field.dtype)
    for p in prange(P):
        bx, by, bz = base[p, 0], base[p, 1], base[p, 2]
        tx, ty, tz = t[p, 0], t[p, 1], t[p, 2]
        for a in range(2):
            wx = tx if a == 1 else 1.0 - tx
            for b in range(2):
                wy = ty if b == 1 else 1.0 - ty
                for c in range(2):
                    wz = tz if c == 1 else 1.0 - tz
                    w = wx * wy * wz
                    for ch in range(C):
                        out[p, ch] += w * field[ch, bx + a, by + b, bz + c]
    return out


@njit(cache=True, parallel=True)
def gather_grad_pos(field, base, t, live, gout, inv_h):
    C = field.shape[0]
    P = base.shape[0]
    gpos = np.zeros((P, 3), dtype=field.dtype)
    for p in prange(P):
        bx, by, bz = base[p, 0], base[p, 1], base[p, 2]
        tx, ty, tz = t[p, 0], t[p, 1], t[p, 2]
        dx = inv_h * live[p, 0]
        dy = inv_h * live[p, 1]
        dz = inv_h * live[p, 2]
        g0 = 0.0
        g1 = 0.0
        g2 = 0.0
        for a in range(2):
            wx = tx if a == 1 else 1.0 - tx
            dwx = dx if a == 1 else -dx
            for b in range(2):
                wy = ty if b == 1 else 1.0 - ty
                dwy = dy if b == 1 else -dy
                for c in range(2):
                    wz = tz if c == 1 else 1.0 - tz
                    dwz = dz if c == 1 else -dz
                    s = 0.0
                    for ch in range(C):
                        s += field[ch, bx + a, by + b, bz + c] * gout[p, ch]
                    g0 += dwx * wy * wz * s
                    g1 += wx * dwy * wz * s
                    g2 += wx * wy * dwz * s
        gpos[p, 0] = g0
        gpos[p, 1] = g1
        gpos[p, 2] = g2
    return gpos


@njit(cache=True, parallel=True)
def scatter_grad_pos(q, base, t, live, gfield, inv_h):
    C = q.shape[1]
    P = base.shape[0]
    gpos = np.zeros((P, 3), dtype=q.dtype)
    for p in prange(P):
        bx, by, bz = base[p, 0], base[p, 1], base[p, 2]
        tx, ty, tz = t[p, 0], t[p, 1], t[p, 2]
        dx = inv_h * live[p, 0]
        dy = inv_h * live[p, 1]
        dz = inv_h * live[p, 2]
        g0 = 0.0
        g1 = 0.0
        g2 = 0.0
        for a in range(2):
            wx = tx if a == 1 else 1.0 - tx
            dwx = dx if a == 1 else -dx
            for b in range(2):
                wy = ty if b == 1 else 1.0 - ty
                dwy = dy if b == 1 else -dy
                for c in range(2):
                    wz = tz if c == 1 else 1.0 - tz
                    dwz = dz if c == 1 else -dz
                    s = 0.0
                    for ch in range(C):
                        s += q[p, ch] * gfield[ch, bx + a, by + b, bz + c]
                    g0 += dwx * wy * wz * s
                    g1 += wx * dwy * wz * s
                    g2 += wx * wy * dwz * s
        gpos[p, 0] = g0
        gpos[p, 1] = g1
        gpos[p, 2] = g2
    return gpos


def _to_channels_last(x):
    # [B,C,N,N,N] -> zero-padded [B,N+2,N+2,N+2,C]; contiguous channel rows
    # keep the inner reduction loops SIMD-friendly
    B, C, N = x.shape[0], x.shape[1], x.shape[2]
    out = np.zeros((B, N + 2, N + 2, N + 2, C), dtype=x.dtype)
    out[:, 1 : N + 1, 1 : N + 1, 1 : N + 1, :] = x.transpose(0, 2, 3, 4, 1)
    return out


@njit(cache=True, parallel=True, fastmath=True)
def _conv3d_fwd_cl(xp, kt, N):
    # xp[B,N+2,N+2,N+2,Ci], kt[3,3,3,Ci,Co] -> y[B,Co,N,N,N]
    B = xp.shape[0]
    Ci = xp.shape[4]
    Co = kt.shape[4]
    y = np.empty((B, Co, N, N, N), dtype=xp.dtype)
    for bz in prange(B * N):
        b = bz // N
        z = bz % N
        acc = np.empty(Co, dtype=xp.dtype)
        for yy in range(N):
            for xx in range(N):
                for o in range(Co):
                    acc[o] = 0.0
                for dz in range(3):
                    for dy in range(3):
                        for dx in range(3):
                            row = xp[b, z + dz, yy + dy, xx + dx]
                            kmat = kt[dz, dy, dx]
                            for c in range(Ci):
                                w = row[c]
                                if w != 0.0:
                                    kr = kmat[c]
                                    for o in range(Co):
                                        acc[o] += w * kr[o]
                for o in range(Co):
                    y[b, o, z, yy, xx] = acc[o]
    return y


def conv3d_fwd(x, k):
    N = x.shape[2]
    xp = _to_channels_last(x)
    kt = np.ascontiguousarray(k.transpose(2, 3, 4, 1, 0))
    return _conv3d_fwd_cl(xp, kt, N)


@njit(cache=True, parallel=True, fastmath=True)
def _conv3d_grad_x_cl(gp, kf, N):
    # gp[B,N+2,N+2,N+2,Co], kf[3,3,3,Co,Ci] (flipped) -> gx[B,Ci,N,N,N]
    B = gp.shape[0]
    Co = gp.shape[4]
    Ci = kf.shape[4]
    gx = np.empty((B, Ci, N, N, N), dtype=gp.dtype)
    for bz in prange(B * N):
        b = bz // N
        z = bz % N
        acc = np.empty(Ci, dtype=gp.dtype)
        for yy in range(N):
            for xx in range(N):
                for c in range(Ci):
                    acc[c] = 0.0
                for dz in range(3):
                    for dy in range(3):
                        for dx in range(3):
                            row = gp[b, z + dz, yy + dy, xx + dx]
                            kmat = kf[dz, dy, dx]
                            for o in range(Co):
                                w = row[o]
                                if w != 0.0:
                                    kr = kmat[o]
                                    for c in range(Ci):
                                        acc[c] += w * kr[c]
                for c in range(Ci):
                    gx[b, c, z, yy, xx] = acc[c]
    return gx


def conv3d_grad_x(gy, k):
    N = gy.shape[2]
    gp = _to_channels_last(gy)
    # kf[dz,dy,dx,o,c] holds the spatially flipped kernel
    kf = np.ascontiguousarray(k[:, :, ::-1, ::-1, ::-1].transpose(2, 3, 4, 0, 1))
    return _conv3d_grad_x_cl(gp, kf, N)


@njit(cache=True, parallel=True, fastmath=True)
def _conv3d_grad_k_cl(gy, xp, N):
    # gy[B,Co,N,N,N], xp[B,N+2,N+2,N+2,Ci] -> gk[Co,3,3,3,Ci]
    B = gy.shape[0]
    Co = gy.shape[1]
    Ci = xp.shape[4]
    gk = np.zeros((Co, 3, 3, 3, Ci), dtype=gy.dtype)
    for o in prange(Co):
        for b in range(B):
            for z in range(N):
                for yy in range(N):
                    for xx in range(N):
                        g = gy[b, o, z, yy, xx]
                        if g != 0.0:
                            for dz in range(3):
                                for dy in range(3):
                                    for dx in range(3):
                                        row = xp[b, z + dz, yy + dy, xx + dx]
                                        acc = gk[o, dz, dy, dx]
                                        for c in range(Ci):
                                            acc[c] += g * row[c]
    return gk


def conv3d_grad_k(gy, x):
    N = gy.shape[2]
    xp = _to_channels_last(x)
    gk = _conv3d_grad_k_cl(np.ascontiguousarray(gy), xp, N)
    return np.ascontiguousarray(gk.transpose(0, 4, 1, 2, 3))
