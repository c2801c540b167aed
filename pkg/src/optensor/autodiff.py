"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every op on a tensor that requires grad appends a node to the active
:class:`Tape`; :func:`backward` replays the tape in reverse. Broadcasting is
deliberately absent: binary ops need identical shapes, and the few
row-broadcast cases the models need (biases, peepholes) have their own ops.
"""
import contextlib
import threading

import numpy as np

from . import kernels
from .errors import DimensionError, UsageError


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    def zero_grad(self):
        self.grad = None

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise UsageError(f"item() needs a one-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Ordered record of (output, inputs, backward rule)."""

    def __init__(self):
        self.nodes = []
        self.enabled = True

    def record(self, out, inputs, rule):
        self.nodes.append((out, inputs, rule))

    def clear(self):
        self.nodes.clear()

    def __len__(self):
        return len(self.nodes)


_local = threading.local()


def get_tape():
    tape = getattr(_local, "tape", None)
    if tape is None:
        tape = _local.tape = Tape()
    return tape


@contextlib.contextmanager
def no_grad():
    tape = get_tape()
    prev, tape.enabled = tape.enabled, False
    try:
        yield
    finally:
        tape.enabled = prev


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, inputs, rule):
    tape = get_tape()
    track = tape.enabled and any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = track
    out.grad = None
    out.name = None
    if track:
        tape.record(out, inputs, rule)
    return out


def _same_shape(op, a, b):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def backward(loss, tape=None):
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tracked tensor, then clear the tape."""
    tape = tape or get_tape()
    if loss.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad or not tape.nodes:
        raise UsageError("backward called on a loss with no recorded operations")
    loss.grad = np.ones_like(loss.data)
    for out, inputs, rule in reversed(tape.nodes):
        if out.grad is None:
            continue
        grads = rule(out.grad)
        for t, g in zip(inputs, grads):
            if g is None or not t.requires_grad:
                continue
            if t.grad is None:
                t.grad = np.array(g, dtype=np.float64, copy=True).reshape(t.shape)
            else:
                t.grad += g
    tape.clear()


# elementwise -------------------------------------------------------------

def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("add", a, b)
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("sub", a, b)
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b):
    """Hadamard product."""
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("mul", a, b)
    return _result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(a, c):
    c = float(c)
    return _result(a.data * c, (a,), lambda g: (g * c,))


def add_scalar(a, c):
    return _result(a.data + float(c), (a,), lambda g: (g,))


def rsub_scalar(c, a):
    """c - a, elementwise."""
    return _result(float(c) - a.data, (a,), lambda g: (-g,))


def sigmoid(a):
    # split by sign so exp never overflows
    x = a.data
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _result(s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a):
    t = np.tanh(a.data)
    return _result(t, (a,), lambda g: (g * (1.0 - t * t),))


def square(a):
    return _result(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def batch_add(x, b):
    """x + b with b repeated along the leading (batch) axis; b.shape == x.shape[1:]."""
    if b.shape != x.shape[1:]:
        raise DimensionError(f"batch_add: {b.shape} does not match trailing shape of {x.shape}")
    return _result(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=0)))


def batch_mul(x, w):
    """x * w with w repeated along the leading (batch) axis; w.shape == x.shape[1:]."""
    if w.shape != x.shape[1:]:
        raise DimensionError(f"batch_mul: {w.shape} does not match trailing shape of {x.shape}")
    return _result(x.data * w.data, (x, w), lambda g: (g * w.data, (g * x.data).sum(axis=0)))


# reductions and losses ---------------------------------------------------

def sum_all(a):
    return _result(np.array(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape),))


def mean_all(a):
    n = a.size
    return _result(np.array(a.data.mean()), (a,), lambda g: (np.broadcast_to(g / n, a.shape),))


def mse_loss(pred, target):
    pred, target = _as_tensor(pred), _as_tensor(target)
    _same_shape("mse_loss", pred, target)
    if pred.size == 0:
        raise DimensionError("mse_loss: empty input")
    diff = pred.data - target.data
    n = diff.size

    def rule(g):
        d = (2.0 / n) * diff * g
        return d, -d

    return _result(np.array(np.mean(diff * diff)), (pred, target), rule)


# linear algebra ----------------------------------------------------------

def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return _result(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def _pads(k, dilation, padding):
    if padding == "valid":
        return 0, 0
    if padding == "same":
        total = (k - 1) * dilation
        return total // 2, total - total // 2
    raise ValueError(f"padding must be 'valid' or 'same', got {padding!r}")


def conv1d(x, kernel, bias=None, dilation=1, padding="valid"):
    """Cross-correlation of (B, C_in, W) with (C_out, C_in, k) kernels."""
    if x.ndim != 3 or kernel.ndim != 3 or x.shape[1] != kernel.shape[1]:
        raise DimensionError(f"conv1d: input {x.shape} incompatible with kernel {kernel.shape}")
    k = kernel.shape[2]
    if k < 1 or dilation < 1:
        raise DimensionError(f"conv1d: need k >= 1 and dilation >= 1, got k={k}, dilation={dilation}")
    if bias is not None and bias.shape != (kernel.shape[0],):
        raise DimensionError(f"conv1d: bias {bias.shape} does not match {kernel.shape[0]} output channels")
    span = (k - 1) * dilation + 1
    if padding == "valid" and x.shape[2] < span:
        raise DimensionError(f"conv1d: width {x.shape[2]} shorter than receptive field {span}")
    pl, pr = _pads(k, dilation, padding)
    out = kernels.conv1d_forward(x.data, kernel.data, None if bias is None else bias.data,
                                 dilation, pl, pr)
    inputs = (x, kernel) if bias is None else (x, kernel, bias)

    def rule(g):
        gx, gw = kernels.conv1d_backward(g, x.data, kernel.data, dilation, pl, pr,
                                         x.requires_grad, kernel.requires_grad)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2))

    return _result(out, inputs, rule)


# shape ops ---------------------------------------------------------------

def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat: empty list")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != axis
        ):
            raise DimensionError(f"concat: incompatible shapes {ref} and {t.shape} on axis {axis}")
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
                   lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    for t in tensors[1:]:
        _same_shape("stack", tensors[0], t)
    n = len(tensors)
    return _result(np.stack([t.data for t in tensors], axis=axis), tuple(tensors),
                   lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


def narrow(a, axis, start, length):
    """Slice ``length`` entries starting at ``start`` along ``axis``."""
    if start < 0 or start + length > a.shape[axis]:
        raise DimensionError(f"narrow: [{start}, {start + length}) out of range for axis {axis} of {a.shape}")
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)

    def rule(g):
        full = np.zeros(a.shape)
        full[idx] = g
        return (full,)

    return _result(a.data[idx], (a,), rule)


def select(a, index):
    """a[index] along the leading axis (drops that axis)."""
    def rule(g):
        full = np.zeros(a.shape)
        full[index] = g
        return (full,)

    return _result(a.data[index], (a,), rule)


def reshape(a, shape):
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {a.shape} as {shape}") from exc
    return _result(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes):
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _result(np.ascontiguousarray(a.data.transpose(axes)), (a,),
                   lambda g: (g.transpose(inverse),))


# optimisation ------------------------------------------------------------

class Adam:
    """Adam with bias correction over an ordered ``{name: Tensor}`` mapping."""

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {name: np.zeros(p.shape) for name, p in params.items()}
        self.v = {name: np.zeros(p.shape) for name, p in params.items()}

    def step(self):
        missing = [name for name, p in self.params.items() if p.grad is None]
        if missing:
            raise UsageError(f"adam_step: no gradient for parameter(s) {', '.join(missing)}")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


def adam_step(params, state):
    """Functional spelling of ``state.step()`` for an :class:`Adam` state bound to ``params``."""
    if state.params is not params:
        raise UsageError("adam_step: optimizer state belongs to a different parameter set")
    state.step()


def uniform_init(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)
