"""Dense tensors with reverse-mode automatic differentiation.

A ``Tensor`` wraps a numpy array plus an optional gradient buffer.  Every
differentiable operation records its parents and a vector-Jacobian closure;
``backward()`` on a scalar walks the graph in reverse topological order and
accumulates gradients into every tensor with ``requires_grad``.

Elementwise operations require exactly matching shapes (no broadcasting);
the only implicit expansion in the library is bias addition inside ``linear``
and ``conv3d``.  The default dtype is float32; switch to float64 with
``precision("float64")`` for gradient checks.
"""

from contextlib import contextmanager

import numpy as np

from .errors import DimensionError, GraphError

_DTYPES = {"float32": np.float32, "float64": np.float64}
_default_dtype = np.float32
_grad_enabled = True


def set_default_dtype(dtype) -> None:
    """Set the dtype used for newly created tensors ('float32'/'float64')."""
    global _default_dtype
    if isinstance(dtype, str):
        dtype = _DTYPES[dtype]
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype!r}")
    _default_dtype = dtype


def default_dtype():
    return _default_dtype


@contextmanager
def precision(dtype):
    """Temporarily switch the default dtype (use 'float64' for grad checks)."""
    prev = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / oracles)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=_default_dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._vjp = None

    @classmethod
    def _raw(cls, data, requires_grad):
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = requires_grad
        out._parents = ()
        out._vjp = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor._raw(self.data, False)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Accumulate d(self)/d(leaf) into ``grad`` of every reachable tensor.

        ``self`` must be scalar.  Repeated calls without ``zero_grad`` add up.
        """
        if self.data.size != 1:
            raise GraphError(f"backward needs a scalar, got shape {self.shape}")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        flowing = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = flowing.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            if node._vjp is None:
                continue
            for p, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not p.requires_grad:
                    continue
                if id(p) in flowing:
                    flowing[id(p)] = flowing[id(p)] + pg
                else:
                    flowing[id(p)] = pg

    # operators ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _make(data, parents, vjp):
    rg = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor._raw(np.asarray(data), rg)
    if rg:
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _check_same_shape(a, b, opname):
    if a.data.shape != b.data.shape:
        raise DimensionError(f"{opname}: shapes {a.shape} vs {b.shape}")


def add(a, b):
    if not isinstance(b, Tensor):
        c = a.data.dtype.type(b)
        return _make(a.data + c, (a,), lambda g: (g,))
    _check_same_shape(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b):
    if not isinstance(b, Tensor):
        return add(a, -b)
    _check_same_shape(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b):
    if not isinstance(b, Tensor):
        return scale(a, b)
    _check_same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def div(a, b):
    if not isinstance(b, Tensor):
        return scale(a, 1.0 / b)
    _check_same_shape(a, b, "div")
    ad, bd = a.data, b.data
    return _make(ad / bd, (a, b), lambda g: (g / bd, -g * ad / (bd * bd)))


def scale(a, s):
    s = a.data.dtype.type(s)
    return _make(a.data * s, (a,), lambda g: (g * s,))


def relu(a):
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0), (a,), lambda g: (g * mask,))


def maximum_scalar(a, c):
    """Elementwise max(a, c); gradient flows only where a > c."""
    c = a.data.dtype.type(c)
    mask = a.data > c
    return _make(np.maximum(a.data, c), (a,), lambda g: (g * mask,))


def linear(x, w, b):
    """Affine map y = x @ w.T + b for x[B,Cin], w[Cout,Cin], b[Cout]."""
    if x.ndim != 2 or w.ndim != 2 or b.ndim != 1:
        raise DimensionError(
            f"linear: need x[B,Cin], w[Cout,Cin], b[Cout]; "
            f"got {x.shape}, {w.shape}, {b.shape}"
        )
    if x.shape[1] != w.shape[1] or w.shape[0] != b.shape[0]:
        raise DimensionError(f"linear: {x.shape} x {w.shape} + {b.shape}")
    xd, wd = x.data, w.data

    def vjp(g):
        return g @ wd, g.T @ xd, g.sum(axis=0)

    return _make(xd @ wd.T + b.data, (x, w, b), vjp)


def concat(tensors, axis):
    tensors = list(tensors)
    datas = [t.data for t in tensors]
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _make(np.concatenate(datas, axis=axis), tensors, vjp)


def reduce_sum(a, axis=None):
    ad = a.data

    def vjp(g):
        if axis is None:
            return (np.full_like(ad, g),)
        return (np.repeat(np.expand_dims(g, axis), ad.shape[axis], axis=axis),)

    return _make(ad.sum(axis=axis), (a,), vjp)


def reduce_mean(a, axis=None):
    ad = a.data
    count = ad.size if axis is None else ad.shape[axis]
    if count == 0:
        raise DimensionError("reduce_mean over empty axis")

    def vjp(g):
        if axis is None:
            return (np.full_like(ad, g / count),)
        return (
            np.repeat(np.expand_dims(g / count, axis), ad.shape[axis], axis=axis),
        )

    return _make(ad.mean(axis=axis), (a,), vjp)


def reduce_max(a, axis=None):
    """Max reduction; ties route the gradient to the lowest index."""
    ad = a.data
    if ad.size == 0:
        raise DimensionError("reduce_max over empty tensor")
    if axis is None:
        flat_idx = int(np.argmax(ad))

        def vjp(g):
            ga = np.zeros_like(ad)
            ga.reshape(-1)[flat_idx] = g
            return (ga,)

        return _make(ad.max(), (a,), vjp)

    idx = np.argmax(ad, axis=axis)

    def vjp_axis(g):
        ga = np.zeros_like(ad)
        np.put_along_axis(
            ga, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis
        )
        return (ga,)

    return _make(ad.max(axis=axis), (a,), vjp_axis)


def reshape(a, shape):
    old = a.data.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose2d(a):
    if a.ndim != 2:
        raise DimensionError(f"transpose2d: got {a.shape}")
    return _make(
        np.ascontiguousarray(a.data.T), (a,), lambda g: (np.ascontiguousarray(g.T),)
    )


def log_softmax(a):
    """Row-wise log softmax over the last axis of a 2-D tensor."""
    if a.ndim != 2:
        raise DimensionError(f"log_softmax: need 2-D, got {a.shape}")
    z = a.data - a.data.max(axis=1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    sm = np.exp(out)

    def vjp(g):
        return (g - sm * g.sum(axis=1, keepdims=True),)

    return _make(out, (a,), vjp)


def norm_rows(a):
    """Euclidean norm of each row of a 2-D tensor; zero rows get zero grad."""
    if a.ndim != 2:
        raise DimensionError(f"norm_rows: need 2-D, got {a.shape}")
    ad = a.data
    out = np.sqrt((ad * ad).sum(axis=1))
    safe = np.maximum(out, ad.dtype.type(1e-12))

    def vjp(g):
        return ((g / safe)[:, None] * ad,)

    return _make(out, (a,), vjp)


def mul_rows(a, s):
    """Scale row p of a[P,C] by s[p]."""
    if a.ndim != 2 or s.ndim != 1 or a.shape[0] != s.shape[0]:
        raise DimensionError(f"mul_rows: {a.shape} x {s.shape}")
    ad, sd = a.data, s.data

    def vjp(g):
        return g * sd[:, None], (g * ad).sum(axis=1)

    return _make(ad * sd[:, None], (a, s), vjp)


def tile_rows(v, rows):
    """Repeat a 1-D tensor as identical rows of a [rows, K] tensor."""
    if v.ndim != 1:
        raise DimensionError(f"tile_rows: need 1-D, got {v.shape}")
    out = np.repeat(v.data[None, :], rows, axis=0)
    return _make(out, (v,), lambda g: (g.sum(axis=0),))


def take_rows(a, idx):
    """Select rows of a 2-D tensor by an integer index array."""
    idx = np.asarray(idx, dtype=np.int64)
    ad = a.data

    def vjp(g):
        ga = np.zeros_like(ad)
        np.add.at(ga, idx, g)
        return (ga,)

    return _make(ad[idx], (a,), vjp)


def div_bcast0(num, den):
    """num[C,...] / den[1,...], the one sanctioned channel broadcast."""
    if den.shape[0] != 1 or num.shape[1:] != den.shape[1:]:
        raise DimensionError(f"div_bcast0: {num.shape} / {den.shape}")
    nd, dd = num.data, den.data

    def vjp(g):
        return g / dd, -(g * nd / (dd * dd)).sum(axis=0, keepdims=True)

    return _make(nd / dd, (num, den), vjp)
