"""Neural network layers on top of the tensor core.

Holds the grid convolution, batch normalization (with mutable momentum so a
training loop can anneal it), dropout, and small parameter containers used to
assemble models.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DimensionError, StatisticsError
from .tensor import Tensor, _make, default_dtype, linear, relu


def conv3d(x, k, b):
    """3x3x3 convolution (cross-correlation), stride 1, zero padding 1.

    x[B,Cin,N,N,N] -> [B,Cout,N,N,N]; spatial size is preserved.
    """
    if x.ndim != 5 or k.ndim != 5 or b.ndim != 1:
        raise DimensionError(
            f"conv3d: need x[B,Ci,N,N,N], k[Co,Ci,3,3,3]; got {x.shape}, {k.shape}"
        )
    N = x.shape[2]
    if N < 1 or x.shape[3] != N or x.shape[4] != N:
        raise DimensionError(f"conv3d: bad spatial shape {x.shape}")
    if k.shape[1] != x.shape[1] or k.shape[2:] != (3, 3, 3) or b.shape[0] != k.shape[0]:
        raise DimensionError(f"conv3d: kernel {k.shape} does not fit x {x.shape}")
    xd, kd = x.data, k.data
    y = kernels.conv3d_fwd(xd, kd) + b.data[None, :, None, None, None]

    def vjp(g):
        g = np.ascontiguousarray(g)
        return (
            kernels.conv3d_grad_x(g, kd),
            kernels.conv3d_grad_k(g, xd),
            g.sum(axis=(0, 2, 3, 4)),
        )

    return _make(y, (x, k, b), vjp)


def dropout(x, rate, rng, training):
    """Inverted dropout; identity when not training or rate == 0."""
    if not training or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1.0 - rate)
    return _make(x.data * keep, (x,), lambda g: (g * keep,))


class BatchNorm:
    """Per-channel batch normalization over axis 1 of [B,C,...] input.

    Training mode normalizes with batch statistics and folds them into the
    running buffers as ``running = momentum * batch + (1 - momentum) * running``;
    eval mode uses the running buffers.  ``momentum`` is plain mutable state so
    the trainer can anneal it between epochs.
    """

    def __init__(self, channels, momentum=0.5, eps=1e-5):
        dt = default_dtype()
        self.gamma = Tensor(np.ones(channels, dtype=dt), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dt), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=dt)
        self.running_var = np.ones(channels, dtype=dt)
        self.momentum = momentum
        self.eps = eps

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def __call__(self, x, training):
        if x.ndim < 2 or x.shape[1] != self.gamma.shape[0]:
            raise DimensionError(
                f"batchnorm: {x.shape} does not carry {self.gamma.shape[0]} channels"
            )
        axes = (0,) + tuple(range(2, x.ndim))
        shape = (1, x.shape[1]) + (1,) * (x.ndim - 2)
        xd = x.data
        gd = self.gamma.data.reshape(shape)
        eps = xd.dtype.type(self.eps)

        if training:
            m = xd.size // xd.shape[1]
            if m < 2:
                raise StatisticsError("batchnorm: batch statistics need >= 2 values")
            mu = xd.mean(axis=axes)
            var = xd.var(axis=axes)
            mom = xd.dtype.type(self.momentum)
            self.running_mean += mom * (mu - self.running_mean)
            self.running_var += mom * (var - self.running_var)
            inv_std = 1.0 / np.sqrt(var.reshape(shape) + eps)
            xhat = (xd - mu.reshape(shape)) * inv_std
            y = gd * xhat + self.beta.data.reshape(shape)

            def vjp(g):
                dxhat = g * gd
                sum_dxhat = dxhat.sum(axis=axes, keepdims=True)
                sum_dxhat_xhat = (dxhat * xhat).sum(axis=axes, keepdims=True)
                dx = inv_std / m * (m * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)
                return dx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

            return _make(y, (x, self.gamma, self.beta), vjp)

        inv_std = 1.0 / np.sqrt(self.running_var.reshape(shape) + eps)
        xhat = (xd - self.running_mean.reshape(shape)) * inv_std
        y = gd * xhat + self.beta.data.reshape(shape)

        def vjp_eval(g):
            return g * gd * inv_std, (g * xhat).sum(axis=axes), g.sum(axis=axes)

        return _make(y, (x, self.gamma, self.beta), vjp_eval)


@dataclass
class Dense:
    w: Tensor
    b: Tensor

    @classmethod
    def create(cls, cin, cout, rng, gain=2.0):
        dt = default_dtype()
        std = np.sqrt(gain / cin)
        w = rng.standard_normal((cout, cin)) * std
        return cls(
            Tensor(w.astype(dt), requires_grad=True),
            Tensor(np.zeros(cout, dtype=dt), requires_grad=True),
        )

    def params(self):
        return {"w": self.w, "b": self.b}

    def __call__(self, x):
        return linear(x, self.w, self.b)


@dataclass
class Conv3dLayer:
    k: Tensor
    b: Tensor

    @classmethod
    def create(cls, cin, cout, rng, gain=2.0):
        dt = default_dtype()
        std = np.sqrt(gain / (cin * 27))
        k = rng.standard_normal((cout, cin, 3, 3, 3)) * std
        return cls(
            Tensor(k.astype(dt), requires_grad=True),
            Tensor(np.zeros(cout, dtype=dt), requires_grad=True),
        )

    def params(self):
        return {"k": self.k, "b": self.b}

    def __call__(self, x):
        return conv3d(x, self.k, self.b)


def dense_relu(layer, x):
    return relu(layer(x))
