"""Reverse-mode automatic differentiation over dense float64 arrays.

Each operation records its operands and a closure computing the
vector-Jacobian product, so the tape is rebuilt on every forward pass.
Only the primitives needed by the training objective are provided.

>>> x = Tensor([[3.0]], requires_grad=True)
>>> y = (x * x).sum()
>>> backward(y)
>>> x.grad
array([[6.]])
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DegenerateInputError, DimensionError, NumericError

NORM_FLOOR = 1e-12

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """Dense array with an optional gradient slot and a link to its producer."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), _backward=None, op: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() requires a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    # arithmetic
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None) -> "Tensor":
        n = self.data.size if axis is None else self.data.shape[axis]
        return tsum(self, axis=axis) * (1.0 / n)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(data: np.ndarray, parents: tuple, backward_fn, op: str) -> Tensor:
    """Wrap an op result, attaching graph links only when a parent needs them."""
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward_fn, op=op)
    return Tensor(data)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ----------------------------------------------------------------------------
# elementary ops
# ----------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise DimensionError(f"cannot add shapes {a.shape} and {b.shape}") from exc

    def backward_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), backward_fn, "add")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}") from exc

    def backward_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(out, (a, b), backward_fn, "mul")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def reciprocal(a: Tensor) -> Tensor:
    out = 1.0 / a.data
    return _make(out, (a,), lambda g: (-g * out * out,), "reciprocal")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward_fn(g):
        return g @ b.data.T, a.data.T @ g

    return _make(out, (a, b), backward_fn, "matmul")


def transpose(a: Tensor) -> Tensor:
    return _make(a.data.T, (a,), lambda g: (g.T,), "transpose")


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward_fn(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), backward_fn, "sum")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"cannot concatenate shapes {[t.shape for t in tensors]}") from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward_fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tuple(tensors), backward_fn, "concat")


# ----------------------------------------------------------------------------
# layer-level ops
# ----------------------------------------------------------------------------

def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Row-wise affine map ``x @ weight + bias``."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise DimensionError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    out = x.data @ weight.data
    if bias is None:
        return _make(out, (x, weight), lambda g: (g @ weight.data.T, x.data.T @ g), "linear")
    bias = as_tensor(bias)
    if bias.shape != (weight.shape[1],):
        raise DimensionError(f"linear: bias {bias.shape} does not match output width {weight.shape[1]}")
    out = out + bias.data

    def backward_fn(g):
        return g @ weight.data.T, x.data.T @ g, g.sum(axis=0)

    return _make(out, (x, weight, bias), backward_fn, "linear")


def l2_normalize(v: Tensor) -> Tensor:
    """Scale every row to unit Euclidean norm.

    Rows with norm below ``NORM_FLOOR`` raise instead of being padded with an
    epsilon: a collapsed encoder should fail loudly.
    """
    v = as_tensor(v)
    if v.ndim != 2:
        raise DimensionError(f"l2_normalize expects a matrix, got shape {v.shape}")
    norms = np.sqrt((v.data * v.data).sum(axis=1, keepdims=True))
    if np.any(~(norms >= NORM_FLOOR)):
        bad = np.flatnonzero(~(norms[:, 0] >= NORM_FLOOR))
        raise DegenerateInputError(f"rows {bad.tolist()} have norm below {NORM_FLOOR}")
    out = v.data / norms

    def backward_fn(g):
        return ((g - out * (g * out).sum(axis=1, keepdims=True)) / norms,)

    return _make(out, (v,), backward_fn, "l2_normalize")


def _check_finite(z: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(z)):
        raise NumericError(f"{name}: input contains non-finite entries")


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _logsumexp_rows(z: np.ndarray) -> np.ndarray:
    top = z.max(axis=1, keepdims=True)
    return top + np.log(np.exp(z - top).sum(axis=1, keepdims=True))


def softmax(z: Tensor) -> Tensor:
    """Row-wise softmax with max subtraction."""
    z = as_tensor(z)
    _check_finite(z.data, "softmax")
    out = _softmax_rows(z.data)

    def backward_fn(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return _make(out, (z,), backward_fn, "softmax")


def log_softmax(z: Tensor) -> Tensor:
    z = as_tensor(z)
    _check_finite(z.data, "log_softmax")
    out = z.data - _logsumexp_rows(z.data)

    def backward_fn(g):
        return (g - np.exp(out) * g.sum(axis=1, keepdims=True),)

    return _make(out, (z,), backward_fn, "log_softmax")


def logsumexp(z: Tensor, keep: np.ndarray | None = None) -> Tensor:
    """Row-wise log-sum-exp, optionally restricted to entries where ``keep`` is true.

    Returns a vector of length ``n``. A row with no kept entry is an error
    since its value would be ``-inf``.
    """
    z = as_tensor(z)
    _check_finite(z.data, "logsumexp")
    if keep is None:
        masked = z.data
    else:
        keep = np.asarray(keep, dtype=bool)
        if keep.shape != z.shape:
            raise DimensionError(f"keep mask {keep.shape} does not match {z.shape}")
        if not np.all(keep.any(axis=1)):
            raise ContractError("logsumexp over an empty row")
        masked = np.where(keep, z.data, -np.inf)
    lse = _logsumexp_rows(masked)
    weights = np.exp(masked - lse)

    def backward_fn(g):
        return (weights * g[:, None],)

    return _make(lse[:, 0], (z,), backward_fn, "logsumexp")


def cross_entropy(logits: Tensor, labels, weights=None) -> Tensor:
    """Mean over rows of ``w_i * -log softmax(logits)_i[label_i]``."""
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy expects (n, c) logits, got {logits.shape}")
    n, c = logits.shape
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.shape[0] != n:
        raise DimensionError(f"{labels.shape[0]} labels for {n} rows")
    if np.any((labels < 0) | (labels >= c)):
        raise IndexError(f"labels must lie in [0, {c}), got {labels.tolist()}")
    if weights is None:
        w = np.ones(n)
    else:
        w = np.asarray(weights, dtype=np.float64).reshape(-1)
        if w.shape[0] != n:
            raise DimensionError(f"{w.shape[0]} weights for {n} rows")
        if np.any(w < 0):
            raise ValueError("cross_entropy weights must be nonnegative")
    if n == 0:
        raise ContractError("cross_entropy over an empty batch")
    _check_finite(logits.data, "cross_entropy")
    logp = logits.data - _logsumexp_rows(logits.data)
    rows = np.arange(n)
    out = np.asarray(-(w * logp[rows, labels]).sum() / n)

    def backward_fn(g):
        grad = np.exp(logp)
        grad[rows, labels] -= 1.0
        return (grad * (w * (float(g) / n))[:, None],)

    return _make(out, (logits,), backward_fn, "cross_entropy")


def gradient_reversal(x: Tensor, coeff: float = 1.0) -> Tensor:
    """Identity on the way forward; multiplies the upstream gradient by ``-coeff``."""
    if not coeff > 0:
        raise ContractError(f"gradient reversal coefficient must be positive, got {coeff}")
    x = as_tensor(x)
    return _make(x.data, (x,), lambda g: (-coeff * g,), "gradient_reversal")


# ----------------------------------------------------------------------------
# backward pass
# ----------------------------------------------------------------------------

def topological_order(out: Tensor) -> list[Tensor]:
    """Nodes reachable from ``out``, every operand before its consumer."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(out, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(out: Tensor) -> None:
    """Accumulate d(out)/d(leaf) into ``.grad`` of every leaf that requires it."""
    if out.data.size != 1:
        raise ContractError(f"backward needs a scalar output, got shape {out.shape}")
    if not out.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(out): np.ones_like(out.data)}
    for node in reversed(topological_order(out)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad or pg is None:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# ----------------------------------------------------------------------------
# finite-difference oracle
# ----------------------------------------------------------------------------

def numerical_gradient(fn: Callable[..., float], arrays: Sequence[np.ndarray], eps: float = 1e-5) -> list[np.ndarray]:
    """Central differences of a scalar function of several arrays.

    ``fn`` receives the arrays (perturbed in place) and returns a float.
    """
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = fn(*arrays)
            flat[i] = orig - eps
            lo = fn(*arrays)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2 * eps)
        grads.append(g)
    return grads


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a, n = np.asarray(analytic), np.asarray(numeric)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - n) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))))


def check_gradients(fn: Callable[..., Tensor], point, eps: float = 1e-5) -> float:
    """Max relative error between backward() and central differences.

    ``point`` is one array/Tensor or a sequence of them; ``fn`` takes that
    many Tensors and returns a scalar Tensor.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    single = isinstance(point, (Tensor, np.ndarray, float, int))
    points = [point] if single else list(point)
    arrays = [np.array(p.data if isinstance(p, Tensor) else p, dtype=np.float64) for p in points]

    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = fn(*leaves)
    backward(out)
    analytic = [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]

    def scalar(*arrs):
        with no_grad():
            return float(fn(*[Tensor(a) for a in arrs]).data)

    numeric = numerical_gradient(scalar, arrays, eps)
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))
