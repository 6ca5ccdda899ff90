"""Reverse-mode automatic differentiation over numpy arrays.

A Tape records primitive applications during one forward episode; backward()
walks the record once in reverse and adds into each Parameter's persistent
gradient accumulator. Repeated backward calls without zero_grad therefore sum
exactly. Only the primitives listed by supported_primitives() are
differentiable; using a traced value anywhere else raises
UnsupportedPrimitiveError rather than silently detaching.

The module-level functions (relu, exp, conv2d, ...) dispatch on their
arguments: plain ndarrays take the direct numpy path, Vars are recorded on
their tape. Solver code written against them runs unchanged in inference and
training mode.
"""

import numpy as np

from . import ops
from .errors import ContractError, ShapeError, UnsupportedPrimitiveError

_PRIMITIVES = frozenset({
    "add", "sub", "mul", "div", "relu", "exp", "broadcast", "sum", "mean",
    "conv2d", "avg_pool2", "upsample2", "concat_channels",
    "tile_frames", "fold_frames",
})


def supported_primitives():
    """The primitive names that carry exact backward rules."""
    return _PRIMITIVES


class Parameter:
    """A named trainable array with a persistent gradient accumulator."""

    def __init__(self, value, name):
        self.value = ops.as_f64(value)
        self.grad = np.zeros_like(self.value)
        self.name = name

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


class _Node:
    __slots__ = ("inputs", "vjp", "param")

    def __init__(self, inputs, vjp, param=None):
        self.inputs = inputs
        self.vjp = vjp
        self.param = param


class Tape:
    """Append-only record of one forward episode."""

    def __init__(self):
        self._nodes = []
        self._param_vars = {}

    def __len__(self):
        return len(self._nodes)

    def _record(self, data, inputs, vjp, param=None):
        node = _Node(tuple(v.index for v in inputs), vjp, param)
        self._nodes.append(node)
        return Var(np.asarray(data, dtype=np.float64), self, len(self._nodes) - 1)

    def leaf(self, data):
        """Lift a constant array onto the tape (no gradient)."""
        return self._record(ops.as_f64(data), (), None)

    def param(self, p):
        """Lift a Parameter; repeated lifts of the same object share one node."""
        var = self._param_vars.get(id(p))
        if var is None:
            var = self._record(p.value, (), None, param=p)
            self._param_vars[id(p)] = var
        return var

    def backward(self, loss):
        """Accumulate d(loss)/d(parameter) into every lifted Parameter's .grad.

        Returns {name: gradient array from this pass} covering every Parameter
        lifted onto this tape; parameters the loss does not reach get zeros.
        A plain (non-traced) loss is a no-op returning an empty map.
        """
        if not isinstance(loss, Var):
            return {}
        if loss.tape is not self:
            raise ContractError("loss was recorded on a different tape")
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        adjoints = [None] * (loss.index + 1)
        adjoints[loss.index] = np.ones_like(loss.data)
        grads = {}
        for i in range(loss.index, -1, -1):
            g = adjoints[i]
            adjoints[i] = None
            if g is None:
                continue
            node = self._nodes[i]
            if node.param is not None:
                node.param.grad += g
                grads[node.param.name] = grads.get(node.param.name, 0.0) + g
                continue
            if not node.inputs:
                continue
            for idx, gi in zip(node.inputs, node.vjp(g)):
                if gi is None:
                    continue
                if adjoints[idx] is None:
                    adjoints[idx] = gi.copy() if gi.base is not None else gi
                else:
                    adjoints[idx] = adjoints[idx] + gi
        out = {}
        for var in self._param_vars.values():
            p = self._nodes[var.index].param
            got = grads.get(p.name)
            out[p.name] = np.zeros_like(p.value) if got is None else np.asarray(got)
        return out


def backward(loss):
    """Module-level convenience: dispatch to the loss's own tape; no-op if untraced."""
    if isinstance(loss, Var):
        return loss.tape.backward(loss)
    return {}


def _unbroadcast(g, shape):
    """Reduce gradient g back to `shape` by summing the broadcast axes."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _tape_of(*args):
    tape = None
    for a in args:
        if isinstance(a, Var):
            if tape is None:
                tape = a.tape
            elif tape is not a.tape:
                raise ContractError("operands come from different tapes")
    return tape


def _data(x):
    return x.data if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _binary(name, a, b, fwd, da, db):
    tape = _tape_of(a, b)
    ad, bd = _data(a), _data(b)
    out = fwd(ad, bd)
    if tape is None:
        return out
    inputs = []
    rules = []
    if isinstance(a, Var):
        inputs.append(a)
        rules.append(lambda g: _unbroadcast(da(g, ad, bd), ad.shape))
    if isinstance(b, Var):
        inputs.append(b)
        rules.append(lambda g: _unbroadcast(db(g, ad, bd), bd.shape))
    return tape._record(out, inputs, lambda g: tuple(r(g) for r in rules))


def add(a, b):
    return _binary("add", a, b, lambda x, y: x + y,
                   lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b):
    return _binary("sub", a, b, lambda x, y: x - y,
                   lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b):
    return _binary("mul", a, b, lambda x, y: x * y,
                   lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b):
    return _binary("div", a, b, lambda x, y: x / y,
                   lambda g, x, y: g / y, lambda g, x, y: -g * x / (y * y))


def relu(x):
    """Elementwise max(x, 0); the subgradient at 0 is 0."""
    if not isinstance(x, Var):
        return np.maximum(np.asarray(x, dtype=np.float64), 0.0)
    mask = x.data > 0
    # np.maximum keeps NaN visible instead of silently zeroing it
    return x.tape._record(np.maximum(x.data, 0.0), (x,),
                          lambda g: (np.where(mask, g, 0.0),))


def exp(x):
    if not isinstance(x, Var):
        return np.exp(np.asarray(x, dtype=np.float64))
    out = np.exp(x.data)
    return x.tape._record(out, (x,), lambda g: (g * out,))


def broadcast_to(x, shape):
    """Broadcast (typically a scalar) to `shape`; backward sums back."""
    if not isinstance(x, Var):
        return np.broadcast_to(np.asarray(x, dtype=np.float64), shape).copy()
    src_shape = x.data.shape
    out = np.broadcast_to(x.data, shape).copy()
    return x.tape._record(out, (x,), lambda g: (_unbroadcast(g, src_shape),))


def _sum_vjp(g, shape, axis):
    if axis is None:
        return np.broadcast_to(g, shape).copy()
    return np.broadcast_to(np.expand_dims(g, axis), shape).copy()


def vsum(x, axis=None):
    if not isinstance(x, Var):
        return np.asarray(x, dtype=np.float64).sum(axis=axis)
    shape = x.data.shape
    return x.tape._record(x.data.sum(axis=axis), (x,),
                          lambda g: (_sum_vjp(g, shape, axis),))


def vmean(x, axis=None):
    if not isinstance(x, Var):
        return np.asarray(x, dtype=np.float64).mean(axis=axis)
    shape = x.data.shape
    count = x.data.size if axis is None else shape[axis]
    return x.tape._record(x.data.mean(axis=axis), (x,),
                          lambda g: (_sum_vjp(g, shape, axis) / count,))


def conv2d(x, kernel, bias):
    """Same-padded cross-correlation; differentiable in x, kernel, and bias."""
    tape = _tape_of(x, kernel, bias)
    xd, kd, bd = _data(x), _data(kernel), _data(bias)
    if tape is None:
        return ops.conv2d(xd, kd, bd)
    ops.check_conv_shapes(xd, kd, bd)
    c_out, c_in, k, _ = kd.shape
    _, h, w = xd.shape
    cols = ops.im2col(xd, k)
    kmat = kd.reshape(c_out, c_in * k * k)
    out = (kmat @ cols + bd[:, None]).reshape(c_out, h, w)
    inputs = []
    rules = []
    if isinstance(x, Var):
        inputs.append(x)
        rules.append(lambda gm: ops.col2im(kmat.T @ gm, c_in, h, w, k))
    if isinstance(kernel, Var):
        inputs.append(kernel)
        rules.append(lambda gm: (gm @ cols.T).reshape(kd.shape))
    if isinstance(bias, Var):
        inputs.append(bias)
        rules.append(lambda gm: gm.sum(axis=1))

    def vjp(g):
        gm = g.reshape(c_out, h * w)
        return tuple(r(gm) for r in rules)

    return tape._record(out, inputs, vjp)


def avg_pool2(x):
    if not isinstance(x, Var):
        return ops.avg_pool2(x)
    out = ops.avg_pool2(x.data)
    return x.tape._record(out, (x,),
                          lambda g: (np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) * 0.25,))


def upsample2(x):
    if not isinstance(x, Var):
        return ops.upsample2(x)
    out = ops.upsample2(x.data)

    def vjp(g):
        return ((g[:, 0::2, 0::2] + g[:, 0::2, 1::2])
                + (g[:, 1::2, 0::2] + g[:, 1::2, 1::2]),)

    return x.tape._record(out, (x,), vjp)


def concat_channels(parts):
    """Concatenate a sequence of [C,H,W] pieces along channels."""
    parts = list(parts)
    if not parts:
        raise ContractError("concat_channels needs at least one part")
    tape = _tape_of(*parts)
    datas = [_data(p) for p in parts]
    for d in datas:
        if d.ndim != 3 or d.shape[1:] != datas[0].shape[1:]:
            raise ShapeError(f"concat_channels spatial mismatch: {[d.shape for d in datas]}")
    out = np.concatenate(datas, axis=0)
    if tape is None:
        return out
    offsets = np.cumsum([0] + [d.shape[0] for d in datas])
    inputs = []
    spans = []
    for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
        if isinstance(p, Var):
            inputs.append(p)
            spans.append((lo, hi))
    return tape._record(out, inputs,
                        lambda g: tuple(g[lo:hi] for lo, hi in spans))


def tile_frames(x, b_max):
    """Repeat the frame sequence cyclically until b_max frames are filled."""
    b = _data(x).shape[0]
    if not 1 <= b <= b_max:
        raise ContractError(f"cannot tile {b} frames into {b_max}")
    idx = np.arange(b_max) % b
    if not isinstance(x, Var):
        return _data(x)[idx]

    def vjp(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return x.tape._record(x.data[idx], (x,), vjp)


def fold_frames(x, b_actual):
    """Inverse of tile_frames: average each original frame's copies."""
    b_max = _data(x).shape[0]
    if not 1 <= b_actual <= b_max:
        raise ContractError(f"cannot fold {b_max} frames back to {b_actual}")
    idx = np.arange(b_max) % b_actual
    counts = np.bincount(idx, minlength=b_actual).astype(np.float64)
    if not isinstance(x, Var):
        out = np.zeros((b_actual,) + _data(x).shape[1:])
        np.add.at(out, idx, _data(x))
        return out / counts[:, None, None]
    out = np.zeros((b_actual,) + x.data.shape[1:])
    np.add.at(out, idx, x.data)
    out /= counts[:, None, None]
    return x.tape._record(out, (x,),
                          lambda g: ((g / counts[:, None, None])[idx],))


class Var:
    """A value being traced on a tape. Arithmetic records nodes; everything
    outside supported_primitives() raises UnsupportedPrimitiveError."""

    __array_ufunc__ = None  # make ndarray <op> Var defer to our reflected operators
    __slots__ = ("data", "tape", "index")

    def __init__(self, data, tape, index):
        self.data = data
        self.tape = tape
        self.index = index

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        """Detach and return the scalar value (for logging only)."""
        return float(self.data)

    def sum(self, axis=None):
        return vsum(self, axis=axis)

    def mean(self, axis=None):
        return vmean(self, axis=axis)

    def relu(self):
        return relu(self)

    def exp(self):
        return exp(self)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return sub(0.0, self)

    def __repr__(self):
        return f"Var(shape={self.data.shape}, tape_index={self.index})"

    def _unsupported(self, name):
        raise UnsupportedPrimitiveError(
            f"'{name}' has no backward rule; supported primitives: "
            f"{sorted(_PRIMITIVES)}")

    def __pow__(self, other):
        self._unsupported("pow")

    __rpow__ = __pow__

    def __matmul__(self, other):
        self._unsupported("matmul")

    __rmatmul__ = __matmul__

    def __mod__(self, other):
        self._unsupported("mod")

    def __abs__(self):
        self._unsupported("abs")

    def __getitem__(self, key):
        self._unsupported("getitem")

    def __lt__(self, other):
        self._unsupported("comparison")

    __le__ = __gt__ = __ge__ = __lt__

    def __float__(self):
        self._unsupported("float (use .item() to detach explicitly)")

    def __bool__(self):
        self._unsupported("bool")
