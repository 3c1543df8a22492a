"""
tensor.py - Dense float64 tensors with reverse-mode differentiation.

Every op builds its output eagerly and, when gradients are enabled and an
input requires them, records a closure that pushes the upstream gradient
back to its parents. `Tensor.backward()` orders the graph topologically
(iteratively, no recursion limit) and runs each closure exactly once.

Every op output is checked for NaN/Inf and raises NonFiniteError.
"""

from __future__ import annotations

import contextlib
import math
import threading
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from errors import LabelError, NonFiniteError, ShapeError, TrainingError

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording a graph (thread-local)."""
    previous = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


# ---------------------------------------------------------------------------
# Tensor / Parameter
# ---------------------------------------------------------------------------

class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False,
                 _parents: tuple = (), _op: str = ""):
        self.data          = np.array(data, dtype=np.float64)
        self.grad          = None
        self.requires_grad = requires_grad
        self._parents      = _parents
        self._backward: Callable[[np.ndarray], tuple] | None = None
        self._op           = _op

    # -- introspection -----------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op='{self._op}', requires_grad={self.requires_grad})"

    # -- autodiff ----------------------------------------------------------

    def zero_grad(self):
        self.grad = None

    def backward(self, grad: np.ndarray | None = None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without a gradient needs a scalar, got {self.shape}")
            grad = np.ones_like(self.data)

        topo: list[Tensor] = []
        visited: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))

        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # -- operators ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def sum(self, axis=None, keepdims: bool = False):
        return reduce_sum(self, axis, keepdims)


class Parameter(Tensor):
    """Trainable leaf tensor with a stable name (checkpoint key)."""
    __slots__ = ("name",)

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires_grad=True)
        self.name = name

    def __repr__(self):
        return f"Parameter('{self.name}', shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(data: np.ndarray, op: str):
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op} produced non-finite values")


def _result(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    _check_finite(data, op)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out = Tensor(data, requires_grad=True, _parents=tuple(parents), _op=op)
        out._backward = backward
        return out
    return Tensor(data, _op=op)


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum *grad* down to *shape* (reverses numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Elementwise and structural ops
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from None
    return _result(data, (a, b),
                   lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} do not broadcast") from None
    return _result(data, (a, b),
                   lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not broadcast") from None
    return _result(data, (a, b),
                   lambda g: (unbroadcast(g * b.data, a.shape),
                              unbroadcast(g * a.data, b.shape)), "mul")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes (both operands ≥ 2-D)."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: batch dims of {a.shape} and {b.shape} do not broadcast") from None

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return _result(data, (a, b), backward, "matmul")


def swap_last(x: Tensor) -> Tensor:
    """Transpose of the last two axes."""
    return _result(np.swapaxes(x.data, -1, -2).copy(), (x,),
                   lambda g: (np.swapaxes(g, -1, -2),), "swap_last")


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from None
    return _result(data.copy(), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def expand(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        data = np.broadcast_to(x.data, shape).copy()
    except ValueError:
        raise ShapeError(f"expand: cannot broadcast {x.shape} to {tuple(shape)}") from None
    return _result(data, (x,), lambda g: (unbroadcast(g, x.shape),), "expand")


def index(x: Tensor, key) -> Tensor:
    data = x.data[key]

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, key, g)
        return (full,)

    return _result(np.array(data, dtype=np.float64), (x,), backward, "index")


def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(np.asarray(data, dtype=np.float64), (x,), backward, "sum")


def mean(x: Tensor, axis=None) -> Tensor:
    count = x.data.size if axis is None else x.shape[axis]
    if count == 0:
        raise ShapeError("mean over an empty axis")
    return mul(reduce_sum(x, axis), 1.0 / count)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0]
    ax = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(t.shape[i] != ref.shape[i]
                                     for i in range(ref.ndim) if i != ax):
            raise ShapeError(f"concat: shapes {ref.shape} and {t.shape} differ off axis {axis}")
    data  = np.concatenate([t.data for t in tensors], axis=ax)
    edges = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def backward(g):
        return tuple(np.take(g, np.arange(edges[i], edges[i + 1]), axis=ax)
                     for i in range(len(tensors)))

    return _result(data, tuple(tensors), backward, "concat")


def concat_lastdim(a: Tensor, b: Tensor) -> Tensor:
    return concat([a, b], axis=-1)


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------

def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _result(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def sigmoid(x: Tensor) -> Tensor:
    # split form: never overflows and stays above 0 down to about -745
    e = np.exp(-np.abs(x.data))
    y = np.where(x.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _result(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def relu(x: Tensor) -> Tensor:
    keep = x.data > 0
    return _result(np.where(keep, x.data, 0.0), (x,), lambda g: (g * keep,), "relu")


def softmax_lastdim(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """
    Softmax over the last axis, max-subtracted. *mask* (broadcastable to x,
    True = keep) removes positions from the normalisation; a slice with no
    kept position is a ShapeError.
    """
    z = x.data
    if mask is not None:
        keep = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
        if not np.all(keep.any(axis=-1)):
            raise ShapeError("softmax: a row has every position masked")
        z = np.where(keep, z, -np.inf)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, (x,), backward, "softmax")


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------

def dense(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """y = xW + b over the last axis of x; leading axes are batch."""
    if W.ndim != 2 or x.ndim < 1 or x.shape[-1] != W.shape[0] or b.shape != (W.shape[1],):
        raise ShapeError(f"dense: input {x.shape} against W {W.shape}, b {b.shape}")
    lead = x.shape[:-1]
    x2   = x.data.reshape(-1, W.shape[0])
    y    = (x2 @ W.data + b.data).reshape(lead + (W.shape[1],))

    def backward(g):
        g2 = g.reshape(-1, W.shape[1])
        return (g2 @ W.data.T).reshape(x.shape), x2.T @ g2, g2.sum(axis=0)

    return _result(y, (x, W, b), backward, "dense")


def gmu(f_t: Tensor, f_v: Tensor, params: dict[str, Tensor]) -> tuple[Tensor, Tensor]:
    """
    Gated multimodal unit:
        h_t = tanh(W_t f_t + b_t)    h_v = tanh(W_v f_v + b_v)
        z   = σ(W_z [f_t; f_v] + b_z)
        h   = z ⊙ h_t + (1 − z) ⊙ h_v
    Returns (h, z).
    """
    Wz = params["W_z"]
    if Wz.shape[0] != f_t.shape[-1] + f_v.shape[-1]:
        raise ShapeError(f"gmu: W_z takes {Wz.shape[0]} inputs, "
                         f"[f_t; f_v] has {f_t.shape[-1] + f_v.shape[-1]}")
    h_t = tanh(dense(f_t, params["W_t"], params["b_t"]))
    h_v = tanh(dense(f_v, params["W_v"], params["b_v"]))
    z   = sigmoid(dense(concat_lastdim(f_t, f_v), Wz, params["b_z"]))
    if h_t.shape != h_v.shape or z.shape != h_t.shape:
        raise ShapeError(f"gmu: h_t {h_t.shape}, h_v {h_v.shape}, gate {z.shape} disagree")
    return z * h_t + (1.0 - z) * h_v, z


def scaled_dot_attention(Q: Tensor, K: Tensor, V: Tensor,
                         key_mask: np.ndarray | None = None) -> Tensor:
    """
    softmax(QKᵀ/√d) V over the last two axes. *key_mask* (..., m), True
    for real keys, excludes padded keys from the softmax.
    """
    if Q.ndim < 2 or K.ndim < 2 or V.ndim < 2:
        raise ShapeError(f"attention needs matrices, got Q {Q.shape}, K {K.shape}, V {V.shape}")
    d, m = Q.shape[-1], K.shape[-2]
    if d == 0 or m == 0:
        raise ShapeError(f"attention with d={d}, m={m}")
    if K.shape[-1] != d or V.shape[-2] != m:
        raise ShapeError(f"attention: Q {Q.shape}, K {K.shape}, V {V.shape} disagree")
    scores = matmul(Q, swap_last(K)) * (1.0 / math.sqrt(d))
    mask = None if key_mask is None else np.expand_dims(np.asarray(key_mask, dtype=bool), -2)
    return matmul(softmax_lastdim(scores, mask), V)


def global_average_pool(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Mean over the row axis (-2); *mask* (..., n) keeps only real rows."""
    if x.ndim < 2 or x.shape[-2] == 0:
        raise ShapeError(f"global average pool over an empty row axis: {x.shape}")
    if mask is None:
        return mean(x, axis=-2)
    keep = np.asarray(mask, dtype=np.float64)
    count = keep.sum(axis=-1, keepdims=True)
    if np.any(count == 0):
        raise ShapeError("global average pool with every row masked")
    weights = Tensor((keep / count)[..., None])
    return reduce_sum(x * weights, axis=-2)


def conv2d(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """
    3×3 convolution, stride 1, zero "same" padding, channel-last.
    x (B, H, W, C); W (9·C, C_out) with rows ordered (ky, kx, c); b (C_out,).
    """
    if x.ndim != 4 or W.ndim != 2 or W.shape[0] != 9 * x.shape[-1] or b.shape != (W.shape[1],):
        raise ShapeError(f"conv2d: input {x.shape} against W {W.shape}, b {b.shape}")
    B, H, Wd, C = x.shape
    padded = np.pad(x.data, ((0, 0), (1, 1), (1, 1), (0, 0)))
    windows = sliding_window_view(padded, (3, 3), axis=(1, 2))       # B,H,W,C,3,3
    cols = windows.transpose(0, 1, 2, 4, 5, 3).reshape(B * H * Wd, 9 * C)
    y = (cols @ W.data + b.data).reshape(B, H, Wd, W.shape[1])

    def backward(g):
        g2 = g.reshape(-1, W.shape[1])
        dcols = (g2 @ W.data.T).reshape(B, H, Wd, 3, 3, C)
        dpad = np.zeros_like(padded)
        for ky in range(3):
            for kx in range(3):
                dpad[:, ky:ky + H, kx:kx + Wd, :] += dcols[:, :, :, ky, kx, :]
        return dpad[:, 1:-1, 1:-1, :], cols.T @ g2, g2.sum(axis=0)

    return _result(y, (x, W, b), backward, "conv2d")


def max_pool2d(x: Tensor) -> Tensor:
    """2×2 max pooling, stride 2, channel-last; H and W must be even."""
    if x.ndim != 4 or x.shape[1] % 2 or x.shape[2] % 2:
        raise ShapeError(f"max_pool2d needs (B, even H, even W, C), got {x.shape}")
    B, H, Wd, C = x.shape
    blocks = x.data.reshape(B, H // 2, 2, Wd // 2, 2, C).transpose(0, 1, 3, 5, 2, 4)
    blocks = blocks.reshape(B, H // 2, Wd // 2, C, 4)
    arg = blocks.argmax(axis=-1)
    y = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        onehot = np.zeros_like(blocks)
        np.put_along_axis(onehot, arg[..., None], g[..., None], axis=-1)
        back = onehot.reshape(B, H // 2, Wd // 2, C, 2, 2).transpose(0, 1, 4, 2, 5, 3)
        return (back.reshape(B, H, Wd, C),)

    return _result(y, (x,), backward, "max_pool2d")


def embedding_bag(table: Tensor, ids: np.ndarray, rows: np.ndarray, n_rows: int) -> Tensor:
    """out[r] = Σ table[ids[i]] over every i with rows[i] == r."""
    ids  = np.asarray(ids, dtype=np.int64)
    rows = np.asarray(rows, dtype=np.int64)
    if ids.shape != rows.shape:
        raise ShapeError(f"embedding_bag: {ids.shape} ids against {rows.shape} rows")
    out = np.zeros((n_rows, table.shape[1]))
    np.add.at(out, rows, table.data[ids])

    def backward(g):
        dtable = np.zeros_like(table.data)
        np.add.at(dtable, ids, g[rows])
        return (dtable,)

    return _result(out, (table,), backward, "embedding_bag")


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

def weighted_cross_entropy(logits: Tensor, labels, class_weights=(1.0, 1.0)) -> Tensor:
    """Mean over the batch of w_y · (−log softmax(logits)[y])."""
    y = np.asarray(labels)
    if logits.ndim != 2 or logits.shape[1] != 2 or y.shape != (logits.shape[0],):
        raise ShapeError(f"cross entropy: logits {logits.shape} against labels {y.shape}")
    if not np.all(np.isin(y, (0, 1))):
        raise LabelError(f"labels must be 0 or 1, got {sorted(set(y.tolist()) - {0, 1})}")
    w = np.asarray(class_weights, dtype=np.float64)
    if w.shape != (2,) or np.any(w <= 0):
        raise TrainingError(f"class weights must be two positive numbers, got {class_weights}")
    y = y.astype(np.int64)
    n = len(y)
    if n == 0:
        raise ShapeError("cross entropy over an empty batch")

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - log_norm
    wy   = w[y]
    loss = np.asarray(np.sum(wy * -logp[np.arange(n), y]) / n)

    def backward(g):
        p = np.exp(logp)
        p[np.arange(n), y] -= 1.0
        return (g * wy[:, None] * p / n,)

    return _result(loss, (logits,), backward, "cross_entropy")


def class_weights_auto(labels) -> tuple[float, float]:
    """w_c = N / (2 · N_c) over the given (training) labels."""
    y = np.asarray(labels, dtype=np.int64)
    counts = np.bincount(y, minlength=2)[:2]
    if np.any(counts == 0):
        raise TrainingError(f"cannot weight classes with counts {counts.tolist()}")
    return tuple(float(len(y) / (2 * c)) for c in counts)


# ---------------------------------------------------------------------------
# Parameters, modules, init
# ---------------------------------------------------------------------------

def init_weight(rng: np.random.Generator, shape: tuple[int, ...], name: str,
                fan_in: int | None = None) -> Parameter:
    """uniform(−√(1/fan_in), +√(1/fan_in)); fan_in defaults to shape[0]."""
    bound = math.sqrt(1.0 / (fan_in or shape[0]))
    return Parameter(rng.uniform(-bound, bound, size=shape), name)


def init_bias(shape: tuple[int, ...], name: str) -> Parameter:
    return Parameter(np.zeros(shape), name)


class Module:
    """Anything holding Parameters as attributes (directly or in dicts/lists/Modules)."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for attr, value in vars(self).items():
            yield from _walk(value, f"{prefix}{attr}")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        extra   = sorted(set(state) - set(own))
        if missing or extra:
            raise ShapeError(f"state mismatch: missing {missing}, unexpected {extra}")
        for name, p in own.items():
            if state[name].shape != p.shape:
                raise ShapeError(f"'{name}': stored {state[name].shape}, model {p.shape}")
            p.data = np.array(state[name], dtype=np.float64)


def _walk(value, path: str) -> Iterator[tuple[str, Parameter]]:
    if isinstance(value, Parameter):
        yield path, value
    elif isinstance(value, Module):
        yield from value.named_parameters(prefix=f"{path}.")
    elif isinstance(value, dict):
        for key, item in value.items():
            yield from _walk(item, f"{path}.{key}")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(item, f"{path}.{i}")


class Dense(Module):
    def __init__(self, rng: np.random.Generator, n_in: int, n_out: int):
        self.W = init_weight(rng, (n_in, n_out), "W")
        self.b = init_bias((n_out,), "b")

    def __call__(self, x: Tensor) -> Tensor:
        return dense(x, self.W, self.b)


# ---------------------------------------------------------------------------
# Gradient check
# ---------------------------------------------------------------------------

def grad_check(model_fn: Callable[..., Tensor], inputs: Iterable[Tensor],
               eps: float = 1e-6, atol: float = 0.0) -> float:
    """
    Largest relative error between reverse-mode and central-difference
    gradients, rel = |a − n| / max(1e-12, |a| + |n|), over every coordinate
    of every input. Coordinates with |a − n| ≤ *atol* count as exact.
    """
    inputs = list(inputs)
    for t in inputs:
        t.grad = None
        t.requires_grad = True
    loss = model_fn(*inputs)
    if loss.data.size != 1:
        raise ShapeError(f"grad_check needs a scalar function, got {loss.shape}")
    loss.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    worst = 0.0
    with no_grad():
        for t, a in zip(inputs, analytic):
            flat = t.data.reshape(-1)
            for i in range(flat.size):
                saved = flat[i]
                flat[i] = saved + eps
                up = float(model_fn(*inputs).data.sum())
                flat[i] = saved - eps
                down = float(model_fn(*inputs).data.sum())
                flat[i] = saved
                numeric = (up - down) / (2 * eps)
                diff = abs(a.reshape(-1)[i] - numeric)
                if diff <= atol:
                    continue
                worst = max(worst, diff / max(1e-12, abs(a.reshape(-1)[i]) + abs(numeric)))
    return worst
