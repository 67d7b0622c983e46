"""Dense float64 tensors with a reverse-mode gradient tape.

Everything numeric in the model runs through these ops. Design points:

* float64 only: the artifact exists to be verified against finite
  differences, and f64 makes those checks decisive.
* every forward op validates its output for NaN/Inf and fails loudly;
* gradients accumulate (+=) across multiple uses of a node, which the
  sentiment embedding needs because it feeds all four LSTM gates;
* a Tape records ops in construction order (inputs always precede their
  consumers), so backward is a single reverse sweep. One backward pass
  per tape; parameters live as plain numpy arrays outside any tape and
  are wrapped as leaves per forward pass.

Ops applied to tensors that are not on any tape are not recorded, which
makes gradient-free inference (decoding) cheap.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, DomainError, NumericsError, ShapeError

Array = np.ndarray


def _as_f64(x) -> Array:
    return np.asarray(x, dtype=np.float64)


class Tensor:
    """A float64 array, optionally registered on a Tape.

    Treat the data as immutable once created; in-place mutation between
    forward and backward invalidates recorded adjoints.
    """

    __slots__ = ("data", "tape", "node_id", "grad")

    def __init__(self, data, tape: "Tape | None" = None, node_id: int | None = None):
        self.data = _as_f64(data)
        self.tape = tape
        self.node_id = node_id
        self.grad: Array | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        tag = f", node={self.node_id}" if self.node_id is not None else ""
        return f"Tensor(shape={self.shape}{tag})"

    # operator sugar; the named module functions do the work
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Ordered record of differentiable ops plus gradient buffers.

    Leaves registered through ``leaf`` receive a gradient after
    ``backward`` even when unreachable from the loss (zeros, not absent).
    """

    def __init__(self):
        self._records: list[tuple[int, tuple[tuple[int, Callable[[Array], Array]], ...]]] = []
        self._leaves: list[tuple[str | None, Tensor]] = []
        self._next_id = 0
        self._used = False

    def _new_node(self, data: Array) -> Tensor:
        t = Tensor(data, tape=self, node_id=self._next_id)
        self._next_id += 1
        return t

    def leaf(self, data, name: str | None = None) -> Tensor:
        """Register an input tensor whose gradient should be tracked."""
        t = self._new_node(_as_f64(data))
        self._leaves.append((name, t))
        return t

    @property
    def num_nodes(self) -> int:
        return self._next_id

    @property
    def records(self):
        """Read-only view, used by invariants tests."""
        return tuple(self._records)

    def backward(self, loss: Tensor) -> dict[str, Array]:
        """Reverse sweep from a scalar loss.

        Returns gradients for every *named* leaf; every leaf tensor
        (named or not) also gets its ``grad`` attribute filled.
        Calling twice on the same tape is an error.
        """
        if self._used:
            raise ConfigError("backward() already called on this tape; build a fresh tape")
        if loss.tape is not self:
            raise ConfigError("loss tensor is not on this tape")
        if loss.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
        self._used = True

        grads: dict[int, Array] = {loss.node_id: np.ones_like(loss.data)}
        for out_id, pulls in reversed(self._records):
            g_out = grads.get(out_id)
            if g_out is None:
                continue
            for in_id, vjp in pulls:
                contrib = vjp(g_out)
                if not np.all(np.isfinite(contrib)):
                    raise NumericsError("non-finite value in backward pass")
                buf = grads.get(in_id)
                if buf is None:
                    grads[in_id] = contrib.copy() if contrib.base is not None else contrib
                else:
                    buf += contrib

        named: dict[str, Array] = {}
        for name, t in self._leaves:
            g = grads.get(t.node_id)
            if g is None:
                g = np.zeros_like(t.data)
            t.grad = g
            if name is not None:
                named[name] = g
        return named


def backward(loss: Tensor) -> dict[str, Array]:
    """Convenience wrapper around ``loss.tape.backward(loss)``."""
    if loss.tape is None:
        raise ConfigError("loss tensor is not recorded on any tape")
    return loss.tape.backward(loss)


# ----------------------------------------------------------------------
# op plumbing

def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _apply(name: str, inputs: Sequence[Tensor], out_data: Array,
           vjps: Sequence[Callable[[Array], Array] | None]) -> Tensor:
    if not np.all(np.isfinite(out_data)):
        raise NumericsError(f"{name} produced non-finite values")
    tape = None
    for t in inputs:
        if t.tape is not None:
            if tape is None:
                tape = t.tape
            elif tape is not t.tape:
                raise ConfigError(f"{name}: operands recorded on different tapes")
    if tape is None:
        return Tensor(out_data)
    out = tape._new_node(out_data)
    pulls = tuple(
        (t.node_id, vjp)
        for t, vjp in zip(inputs, vjps)
        if t.tape is not None and vjp is not None
    )
    tape._records.append((out.node_id, pulls))
    return out


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Reduce a broadcast gradient back to the operand's shape."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, extent in enumerate(shape):
        if extent == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


# ----------------------------------------------------------------------
# elementwise and linear-algebra ops

def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out = a.data + b.data
    return _apply("add", (a, b), out, (
        lambda g, sh=a.data.shape: _unbroadcast(g, sh),
        lambda g, sh=b.data.shape: _unbroadcast(g, sh),
    ))


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out = a.data - b.data
    return _apply("sub", (a, b), out, (
        lambda g, sh=a.data.shape: _unbroadcast(g, sh),
        lambda g, sh=b.data.shape: _unbroadcast(-g, sh),
    ))


def neg(a) -> Tensor:
    a = _coerce(a)
    return _apply("neg", (a,), -a.data, (lambda g: -g,))


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out = a.data * b.data
    return _apply("mul", (a, b), out, (
        lambda g, o=b.data, sh=a.data.shape: _unbroadcast(g * o, sh),
        lambda g, o=a.data, sh=b.data.shape: _unbroadcast(g * o, sh),
    ))


def matmul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data
    return _apply("matmul", (a, b), out, (
        lambda g, o=b.data: g @ o.T,
        lambda g, o=a.data: o.T @ g,
    ))


def transpose(a) -> Tensor:
    a = _coerce(a)
    if a.data.ndim != 2:
        raise ShapeError(f"transpose expects a 2-d tensor, got shape {a.data.shape}")
    return _apply("transpose", (a,), a.data.T.copy(), (lambda g: g.T,))


def sigmoid(a) -> Tensor:
    a = _coerce(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _apply("sigmoid", (a,), out, (lambda g, y=out: g * y * (1.0 - y),))


def tanh(a) -> Tensor:
    a = _coerce(a)
    out = np.tanh(a.data)
    return _apply("tanh", (a,), out, (lambda g, y=out: g * (1.0 - y * y),))


def exp(a) -> Tensor:
    a = _coerce(a)
    out = np.exp(a.data)
    return _apply("exp", (a,), out, (lambda g, y=out: g * y,))


def log(a) -> Tensor:
    a = _coerce(a)
    if np.any(a.data <= 0.0):
        raise DomainError("log requires strictly positive inputs")
    out = np.log(a.data)
    return _apply("log", (a,), out, (lambda g, x=a.data: g / x,))


def softmax(a, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis`` (max-subtraction)."""
    a = _coerce(a)
    x = a.data
    if x.shape[axis] < 1:
        raise ShapeError("softmax needs at least one element along its axis")
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g, y=out, ax=axis):
        return y * (g - (g * y).sum(axis=ax, keepdims=True))

    return _apply("softmax", (a,), out, (vjp,))


def log_softmax(a, axis: int = -1) -> Tensor:
    a = _coerce(a)
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def vjp(g, ax=axis, ls=out):
        return g - np.exp(ls) * g.sum(axis=ax, keepdims=True)

    return _apply("log_softmax", (a,), out, (vjp,))


def concat(xs: Iterable[Tensor], axis: int = 0) -> Tensor:
    xs = [_coerce(x) for x in xs]
    if not xs:
        raise ShapeError("concat of an empty sequence")
    out = np.concatenate([x.data for x in xs], axis=axis)
    vjps = []
    start = 0
    for x in xs:
        extent = x.data.shape[axis]
        sl = [slice(None)] * out.ndim
        sl[axis] = slice(start, start + extent)
        vjps.append(lambda g, s=tuple(sl): g[s])
        start += extent
    return _apply("concat", xs, out, vjps)


def reduce_sum(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = _coerce(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g, sh=a.data.shape, ax=axis, kd=keepdims):
        if ax is not None and not kd:
            g = np.expand_dims(g, ax)
        return np.broadcast_to(g, sh)

    return _apply("reduce_sum", (a,), out, (vjp,))


def reduce_mean(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = _coerce(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    n = a.data.size if axis is None else a.data.shape[axis]

    def vjp(g, sh=a.data.shape, ax=axis, kd=keepdims, count=n):
        if ax is not None and not kd:
            g = np.expand_dims(g, ax)
        return np.broadcast_to(g, sh) / count

    return _apply("reduce_mean", (a,), out, (vjp,))


def pick(a, index: tuple[int, ...]) -> Tensor:
    """Select one element; returns a 0-d tensor."""
    a = _coerce(a)
    out = np.asarray(a.data[index])

    def vjp(g, sh=a.data.shape, idx=index):
        z = np.zeros(sh)
        z[idx] = g
        return z

    return _apply("pick", (a,), out, (vjp,))


def embedding_lookup(table, index: int) -> Tensor:
    """Row ``index`` of a (V, d) table as a (1, d) tensor.

    Backward accumulates only into that row, so repeated lookups of the
    same row sum their gradients.
    """
    table = _coerce(table)
    if table.data.ndim != 2:
        raise ShapeError(f"embedding table must be 2-d, got shape {table.data.shape}")
    v = table.data.shape[0]
    if not (0 <= index < v):
        raise IndexError(f"embedding index {index} out of range [0, {v})")
    out = table.data[index : index + 1].copy()

    def vjp(g, sh=table.data.shape, row=index):
        z = np.zeros(sh)
        z[row] = g[0]
        return z

    return _apply("embedding_lookup", (table,), out, (vjp,))


def dropout(a, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: scales survivors by 1/(1-rate) at train time.

    Eval mode returns the input tensor itself, bit-identical.
    """
    if not (0.0 <= rate < 1.0):
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    a = _coerce(a)
    if not training or rate == 0.0:
        return a
    if rng is None:
        raise ConfigError("dropout in training mode needs an rng")
    keep = (rng.random(a.data.shape) >= rate).astype(np.float64)
    scale = 1.0 / (1.0 - rate)
    out = a.data * keep * scale

    def vjp(g, m=keep, s=scale):
        return g * m * s

    return _apply("dropout", (a,), out, (vjp,))


# ----------------------------------------------------------------------
# finite-difference verification oracle

def finite_diff_report(build: Callable[[dict[str, Array]], Tensor],
                       params: dict[str, Array],
                       eps: float = 1e-5) -> dict[str, float]:
    """Per-parameter relative error between tape gradients and central differences.

    ``build(params)`` must return a scalar loss Tensor on a fresh tape whose
    named leaves match the keys of ``params``, and must be deterministic
    (dropout disabled or driven by a fixed seed). Parameter arrays are
    perturbed in place and restored.

    The error for one parameter is the max-norm of (analytic - numeric)
    scaled by the larger of the two gradients' max-norms (floored at 1e-8,
    so an all-zero gradient on both sides scores 0).
    """
    loss = build(params)
    if loss.tape is None:
        raise ConfigError("build() must return a loss recorded on a tape")
    analytic = loss.tape.backward(loss)
    missing = set(params) - set(analytic)
    if missing:
        raise ConfigError(f"build() did not register leaves for: {sorted(missing)}")

    report: dict[str, float] = {}
    for name, arr in params.items():
        numeric = np.zeros_like(arr)
        flat = arr.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = build(params).item()
            flat[i] = orig - eps
            f_minus = build(params).item()
            flat[i] = orig
            num_flat[i] = (f_plus - f_minus) / (2.0 * eps)
        a = analytic[name]
        denom = max(float(np.max(np.abs(a), initial=0.0)),
                    float(np.max(np.abs(numeric), initial=0.0)), 1e-8)
        report[name] = float(np.max(np.abs(a - numeric), initial=0.0)) / denom
    return report


def finite_diff_check(build: Callable[[dict[str, Array]], Tensor],
                      params: dict[str, Array],
                      eps: float = 1e-5) -> float:
    """Worst relative error over all parameters; see finite_diff_report."""
    report = finite_diff_report(build, params, eps)
    return max(report.values()) if report else 0.0
