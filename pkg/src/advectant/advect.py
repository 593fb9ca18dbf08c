"""One advection step: reduce features, transfer to the grid, convolve a
generalized force field, derive a velocity field, blend PIC/FLIP, move the
particles, and grow their feature vectors.

Data flow per step (feature width K in, K + 64 out):

    r = relu(reduce(f))                  [P,32]
    F = p2g(r)                           [32,n,n,n]
    F_c = conv-bn-relu x3 (F)            [32,n,n,n]
    g_out = g2p(F_c)                     [P,32]
    V = per-node MLP(F_c)                [3,n,n,n]
    v' = alpha*PIC + (1-alpha)*FLIP
    x' = x + v' * dt
    f' = concat(f, r, g_out)
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError
from .grid import GridField, GridSpec, g2p, p2g
from .nn import BatchNorm, Conv3dLayer, Dense
from .tensor import Tensor, concat, relu, reshape, scale, transpose2d


@dataclass(frozen=True)
class AdvectionParams:
    """Blend weight, time discretization, and layer widths for one model."""

    alpha: float = 0.5
    total_time: float = 1.0
    steps: int = 2
    reduce_width: int = 32
    conv_widths: tuple = (32, 16, 32)
    velocity_widths: tuple = (16, 3)

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise DimensionError(f"alpha must lie in [0,1], got {self.alpha}")
        if self.steps < 0 or self.total_time < 0:
            raise DimensionError("steps and total_time must be nonnegative")
        if self.velocity_widths[-1] != 3:
            raise DimensionError("velocity head must end in 3 channels")

    @property
    def dt(self) -> float:
        return self.total_time / self.steps if self.steps > 0 else 0.0


@dataclass
class ParticleSystem:
    """Positions, velocities, unit masses, and growing feature vectors."""

    x: Tensor
    v: Tensor
    m: Tensor
    f: Tensor

    @classmethod
    def from_cloud(cls, points, features):
        """Fresh system: zero velocities, unit masses."""
        x = points if isinstance(points, Tensor) else Tensor(points)
        P = x.shape[0]
        return cls(
            x=x,
            v=Tensor(np.zeros((P, 3))),
            m=Tensor(np.ones(P)),
            f=features,
        )

    @property
    def count(self) -> int:
        return self.x.shape[0]


@dataclass
class StepParams:
    """Learnable weights for one advection step (never shared across steps)."""

    reduce: Dense
    conv1: Conv3dLayer
    bn1: BatchNorm
    conv2: Conv3dLayer
    bn2: BatchNorm
    conv3: Conv3dLayer
    bn3: BatchNorm
    vel1: Dense
    vel2: Dense

    @classmethod
    def create(cls, feature_width, ap, rng):
        c1, c2, c3 = ap.conv_widths
        vh, vo = ap.velocity_widths
        return cls(
            reduce=Dense.create(feature_width, ap.reduce_width, rng),
            conv1=Conv3dLayer.create(ap.reduce_width, c1, rng),
            bn1=BatchNorm(c1),
            conv2=Conv3dLayer.create(c1, c2, rng),
            bn2=BatchNorm(c2),
            conv3=Conv3dLayer.create(c2, c3, rng),
            bn3=BatchNorm(c3),
            vel1=Dense.create(c3, vh, rng),
            vel2=Dense.create(vh, vo, rng, gain=1.0),
        )

    def params(self):
        out = {}
        for name in ("reduce", "conv1", "conv2", "conv3", "vel1", "vel2",
                     "bn1", "bn2", "bn3"):
            for k, p in getattr(self, name).params().items():
                out[f"{name}.{k}"] = p
        return out

    def batchnorms(self):
        return [self.bn1, self.bn2, self.bn3]


def force_field(gridfeat, sp, training):
    """Three conv-bn-relu layers over the grid features, spatial size kept."""
    n = gridfeat.spec.n
    x = reshape(gridfeat.values, (1,) + gridfeat.values.shape)
    x = relu(sp.bn1(sp.conv1(x), training))
    x = relu(sp.bn2(sp.conv2(x), training))
    x = relu(sp.bn3(sp.conv3(x), training))
    return GridField(gridfeat.spec, reshape(x, (x.shape[1], n, n, n)))


def velocity_field(fc, sp):
    """Per-node two-layer MLP (1x1x1 convolutions) from forces to velocity.

    No activation on the output: velocities are signed.
    """
    n = fc.spec.n
    flat = transpose2d(reshape(fc.values, (fc.channels, n * n * n)))
    hidden = relu(sp.vel1(flat))
    v = sp.vel2(hidden)
    return GridField(fc.spec, reshape(transpose2d(v), (3, n, n, n)))


def pic_flip(v_old, v_grid_new, positions, masses, alpha):
    """Blend of direct interpolation (PIC) and increment transfer (FLIP).

        v_pic  = g2p(V)
        v_flip = v_old + g2p(V - p2g(v_old))
        v'     = alpha * v_pic + (1 - alpha) * v_flip
    """
    if not 0.0 <= alpha <= 1.0:
        raise DimensionError(f"alpha must lie in [0,1], got {alpha}")
    spec = v_grid_new.spec
    v_pic = g2p(v_grid_new, positions)
    if alpha == 1.0:
        return v_pic
    grid_old = p2g(v_old, positions, masses, spec)
    delta = GridField(spec, v_grid_new.values - grid_old.values)
    v_flip = v_old + g2p(delta, positions)
    return scale(v_pic, alpha) + scale(v_flip, 1.0 - alpha)


def integrate(positions, velocities, dt):
    """Explicit Euler: x' = x + v * dt."""
    if dt < 0:
        raise DimensionError(f"dt must be nonnegative, got {dt}")
    if positions.shape != velocities.shape:
        raise DimensionError(
            f"positions {positions.shape} vs velocities {velocities.shape}"
        )
    return positions + scale(velocities, dt)


def advect_step(sys, sp, spec, ap, training):
    """Run one advection step; returns the updated particle system.

    Gradients flow through every path, including the particle positions
    inside the interpolation weights.
    """
    if sys.f.shape[1] != sp.reduce.w.shape[1]:
        raise DimensionError(
            f"feature width {sys.f.shape[1]} does not match reduction layer "
            f"{sp.reduce.w.shape}"
        )
    r = relu(sp.reduce(sys.f))
    F = p2g(r, sys.x, sys.m, spec)
    fc = force_field(F, sp, training)
    g_out = g2p(fc, sys.x)
    V = velocity_field(fc, sp)
    v_new = pic_flip(sys.v, V, sys.x, sys.m, ap.alpha)
    x_new = integrate(sys.x, v_new, ap.dt)
    f_new = concat([sys.f, r, g_out], axis=1)
    return ParticleSystem(x=x_new, v=v_new, m=sys.m, f=f_new)
