"""Dense 64-bit matrices, a small reverse-mode tape, and seeded random streams.

Every matrix in the package is a 2-D float64 ndarray.  Differentiable code
builds graphs of :class:`Tensor` nodes; leaves created through
:func:`parameter` carry a name and an accumulated gradient, so a named leaf
is the package's parameter tensor (value + gradient + name).  Gradients are
verified against central differences by :func:`grad_check`, which exercises
the exact forward code used in training.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, NumericError

Matrix = np.ndarray

_SEED_MASK = (1 << 64) - 1

# Stream labels used by the pipeline; RngStream accepts any label, these are
# the ones the harness wires up.
CANONICAL_STREAMS = ("data-gen", "controller-init", "action-sample", "classifier")


def as_matrix(values) -> Matrix:
    """Coerce to 2-D float64. Scalars become 1x1, flat sequences 1xn."""
    m = np.asarray(values, dtype=np.float64)
    if m.ndim == 0:
        m = m.reshape(1, 1)
    elif m.ndim == 1:
        m = m.reshape(1, -1)
    elif m.ndim != 2:
        raise DimensionError(f"expected at most 2 dimensions, got {m.ndim}")
    return m


def check_finite(m: Matrix, context: str) -> Matrix:
    if not np.all(np.isfinite(m)):
        raise NumericError(f"non-finite values in {context}")
    return m


# ---------------------------------------------------------------------------
# Plain matrix operations (no tape)
# ---------------------------------------------------------------------------


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Standard product with 64-bit accumulation."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return check_finite(a @ b, "matmul result")


def softmax_rows(m: Matrix) -> Matrix:
    """Row-wise softmax with per-row max subtraction for stability."""
    m = check_finite(as_matrix(m), "softmax_rows input")
    shifted = m - m.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax_rows(m: Matrix) -> Matrix:
    m = check_finite(as_matrix(m), "log_softmax_rows input")
    shifted = m - m.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def relu(m: Matrix) -> Matrix:
    """Elementwise max(0, x)."""
    return np.maximum(check_finite(as_matrix(m), "relu input"), 0.0)


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RngStream:
    """A named deterministic stream: same (seed, stream_id) replays bit-identically."""

    seed: int
    stream_id: str

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        entropy = [self.seed & _SEED_MASK, zlib.crc32(self.stream_id.encode("utf-8"))]
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def derive_seed(*parts: int) -> int:
    """Mix several integers into one 64-bit seed, deterministically."""
    ss = np.random.SeedSequence([p & _SEED_MASK for p in parts])
    return int(ss.generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------------------
# Reverse-mode tape
# ---------------------------------------------------------------------------


class Tensor:
    """Graph node holding a matrix value and (for trainable leaves) a gradient.

    Gradients accumulate across backward passes until :func:`zero_grads`;
    constants skip gradient storage entirely.
    """

    __slots__ = ("value", "grad", "name", "_parents", "_backward", "needs_grad")

    def __init__(self, value, name: str = "", parents=(), backward=None, needs_grad=None):
        self.value = as_matrix(value)
        self.name = name
        self._parents = tuple(parents)
        self._backward = backward
        if needs_grad is None:
            needs_grad = bool(name) or any(p.needs_grad for p in self._parents)
        self.needs_grad = needs_grad
        self.grad = np.zeros_like(self.value) if needs_grad else None

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def item(self) -> float:
        if self.value.shape != (1, 1):
            raise DimensionError(f"item() needs a 1x1 tensor, got {self.value.shape}")
        return float(self.value[0, 0])

    # -- operator sugar ------------------------------------------------

    def __matmul__(self, other):
        return t_matmul(self, other)

    def __add__(self, other):
        return t_add(self, other)

    def __sub__(self, other):
        return t_sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return t_scale(self, float(other))
        return t_mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return t_scale(self, -1.0)

    def __repr__(self):
        tag = self.name or ("param" if self.needs_grad else "const")
        return f"Tensor({tag}, shape={self.value.shape})"


def constant(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value, needs_grad=False)


def parameter(value, name: str) -> Tensor:
    """Trainable leaf; name is required so checkpoints and Adam state line up."""
    if not name:
        raise ConfigError("parameter needs a non-empty name")
    return Tensor(np.array(as_matrix(value), dtype=np.float64, copy=True), name=name, needs_grad=True)


# The package's parameter tensor is a named Tensor leaf.
ParamTensor = Tensor


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        if p.grad is not None:
            p.grad.fill(0.0)


def _acc(t: Tensor, g: Matrix) -> None:
    if t.grad is not None:
        t.grad += g


def backward(root: Tensor) -> None:
    """Propagate d(root)/d(leaf) into every reachable leaf's .grad (accumulating)."""
    if root.value.shape != (1, 1):
        raise DimensionError(f"backward needs a scalar (1x1) root, got {root.value.shape}")
    if not root.needs_grad:
        return
    # Iterative post-order: parents end up before children.
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.needs_grad and id(p) not in seen:
                stack.append((p, False))
    root.grad += 1.0
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# Tape operations
# ---------------------------------------------------------------------------


def t_matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = constant(a), constant(b)
    if a.value.shape[1] != b.value.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.value.shape} x {b.value.shape}")
    out = Tensor(a.value @ b.value, parents=(a, b))

    def bwd(g):
        _acc(a, g @ b.value.T)
        _acc(b, a.value.T @ g)

    out._backward = bwd
    return out


def t_add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; b may be a 1xn row broadcast over a's rows (bias)."""
    a, b = constant(a), constant(b)
    av, bv = a.value, b.value
    if av.shape == bv.shape:
        broadcast = False
    elif bv.shape == (1, av.shape[1]):
        broadcast = True
    else:
        raise DimensionError(f"add shape mismatch: {av.shape} + {bv.shape}")
    out = Tensor(av + bv, parents=(a, b))

    def bwd(g):
        _acc(a, g)
        _acc(b, g.sum(axis=0, keepdims=True) if broadcast else g)

    out._backward = bwd
    return out


def t_sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = constant(a), constant(b)
    if a.value.shape != b.value.shape:
        raise DimensionError(f"sub shape mismatch: {a.value.shape} - {b.value.shape}")
    out = Tensor(a.value - b.value, parents=(a, b))

    def bwd(g):
        _acc(a, g)
        _acc(b, -g)

    out._backward = bwd
    return out


def t_mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = constant(a), constant(b)
    if a.value.shape != b.value.shape:
        raise DimensionError(f"mul shape mismatch: {a.value.shape} * {b.value.shape}")
    out = Tensor(a.value * b.value, parents=(a, b))

    def bwd(g):
        _acc(a, g * b.value)
        _acc(b, g * a.value)

    out._backward = bwd
    return out


def t_scale(a: Tensor, c: float) -> Tensor:
    a = constant(a)
    out = Tensor(a.value * c, parents=(a,))
    out._backward = lambda g: _acc(a, g * c)
    return out


def t_transpose(a: Tensor) -> Tensor:
    a = constant(a)
    out = Tensor(a.value.T.copy(), parents=(a,))
    out._backward = lambda g: _acc(a, g.T)
    return out


def t_relu(a: Tensor) -> Tensor:
    a = constant(a)
    mask = a.value > 0.0
    out = Tensor(np.where(mask, a.value, 0.0), parents=(a,))
    out._backward = lambda g: _acc(a, g * mask)
    return out


def t_tanh(a: Tensor) -> Tensor:
    a = constant(a)
    y = np.tanh(a.value)
    out = Tensor(y, parents=(a,))
    out._backward = lambda g: _acc(a, g * (1.0 - y * y))
    return out


def t_sigmoid(a: Tensor) -> Tensor:
    a = constant(a)
    y = 1.0 / (1.0 + np.exp(-a.value))
    out = Tensor(y, parents=(a,))
    out._backward = lambda g: _acc(a, g * y * (1.0 - y))
    return out


def t_exp(a: Tensor) -> Tensor:
    a = constant(a)
    y = np.exp(a.value)
    out = Tensor(y, parents=(a,))
    out._backward = lambda g: _acc(a, g * y)
    return out


def t_log(a: Tensor) -> Tensor:
    a = constant(a)
    out = Tensor(np.log(a.value), parents=(a,))
    out._backward = lambda g: _acc(a, g / a.value)
    return out


def t_softmax_rows(a: Tensor) -> Tensor:
    a = constant(a)
    y = softmax_rows(a.value)
    out = Tensor(y, parents=(a,))

    def bwd(g):
        _acc(a, y * (g - (g * y).sum(axis=1, keepdims=True)))

    out._backward = bwd
    return out


def t_log_softmax_rows(a: Tensor) -> Tensor:
    a = constant(a)
    y = log_softmax_rows(a.value)
    p = np.exp(y)
    out = Tensor(y, parents=(a,))

    def bwd(g):
        _acc(a, g - p * g.sum(axis=1, keepdims=True))

    out._backward = bwd
    return out


def t_layer_norm_rows(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalization: (x - mean) / sqrt(var + eps) * gain + bias."""
    x, gain, bias = constant(x), constant(gain), constant(bias)
    n = x.value.shape[1]
    if gain.value.shape != (1, n) or bias.value.shape != (1, n):
        raise DimensionError("layer norm gain/bias must be 1xn rows matching x columns")
    mu = x.value.mean(axis=1, keepdims=True)
    var = x.value.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.value - mu) * inv
    out = Tensor(xhat * gain.value + bias.value, parents=(x, gain, bias))

    def bwd(g):
        _acc(bias, g.sum(axis=0, keepdims=True))
        _acc(gain, (g * xhat).sum(axis=0, keepdims=True))
        gx = g * gain.value
        term = gx - gx.mean(axis=1, keepdims=True) - xhat * (gx * xhat).mean(axis=1, keepdims=True)
        _acc(x, term * inv)

    out._backward = bwd
    return out


def t_sum_all(a: Tensor) -> Tensor:
    a = constant(a)
    out = Tensor([[a.value.sum()]], parents=(a,))
    out._backward = lambda g: _acc(a, np.full_like(a.value, g[0, 0]))
    return out


def t_mean_all(a: Tensor) -> Tensor:
    a = constant(a)
    out = Tensor([[a.value.mean()]], parents=(a,))
    out._backward = lambda g: _acc(a, np.full_like(a.value, g[0, 0] / a.value.size))
    return out


def t_mean_over_rows(a: Tensor) -> Tensor:
    """(m x n) -> (1 x n) column means; used for sequence pooling."""
    a = constant(a)
    m = a.value.shape[0]
    out = Tensor(a.value.mean(axis=0, keepdims=True), parents=(a,))
    out._backward = lambda g: _acc(a, np.repeat(g, m, axis=0) / m)
    return out


def t_sum_over_cols(a: Tensor) -> Tensor:
    """(m x n) -> (m x 1) row sums."""
    a = constant(a)
    n = a.value.shape[1]
    out = Tensor(a.value.sum(axis=1, keepdims=True), parents=(a,))
    out._backward = lambda g: _acc(a, np.repeat(g, n, axis=1))
    return out


def t_concat_cols(parts: Sequence[Tensor]) -> Tensor:
    parts = [constant(p) for p in parts]
    widths = [p.value.shape[1] for p in parts]
    out = Tensor(np.concatenate([p.value for p in parts], axis=1), parents=tuple(parts))

    def bwd(g):
        at = 0
        for p, w in zip(parts, widths):
            _acc(p, g[:, at:at + w])
            at += w

    out._backward = bwd
    return out


def t_concat_rows(parts: Sequence[Tensor]) -> Tensor:
    parts = [constant(p) for p in parts]
    heights = [p.value.shape[0] for p in parts]
    out = Tensor(np.concatenate([p.value for p in parts], axis=0), parents=tuple(parts))

    def bwd(g):
        at = 0
        for p, h in zip(parts, heights):
            _acc(p, g[at:at + h, :])
            at += h

    out._backward = bwd
    return out


def t_row(a: Tensor, index: int) -> Tensor:
    a = constant(a)
    out = Tensor(a.value[index:index + 1, :].copy(), parents=(a,))

    def bwd(g):
        if a.grad is not None:
            a.grad[index:index + 1, :] += g

    out._backward = bwd
    return out


def t_permute_rows(a: Tensor, order: Sequence[int]) -> Tensor:
    """Row gather: out[i] = a[order[i]]."""
    a = constant(a)
    idx = np.asarray(order, dtype=np.intp)
    out = Tensor(a.value[idx, :].copy(), parents=(a,))

    def bwd(g):
        if a.grad is not None:
            np.add.at(a.grad, idx, g)

    out._backward = bwd
    return out


def t_gather_rows(table: Tensor, indices: Sequence[int]) -> Tensor:
    """Embedding lookup: stacks table rows by index (duplicates allowed)."""
    return t_permute_rows(table, indices)


def t_pick(a: Tensor, rows: Sequence[int], cols: Sequence[int]) -> Tensor:
    """Select entries (rows[i], cols[i]) into an n x 1 column."""
    a = constant(a)
    r = np.asarray(rows, dtype=np.intp)
    c = np.asarray(cols, dtype=np.intp)
    out = Tensor(a.value[r, c].reshape(-1, 1), parents=(a,))

    def bwd(g):
        if a.grad is not None:
            np.add.at(a.grad, (r, c), g[:, 0])

    out._backward = bwd
    return out


def t_minimum(a: Tensor, b: Tensor) -> Tensor:
    a, b = constant(a), constant(b)
    if a.value.shape != b.value.shape:
        raise DimensionError(f"minimum shape mismatch: {a.value.shape} vs {b.value.shape}")
    take_a = a.value <= b.value
    out = Tensor(np.where(take_a, a.value, b.value), parents=(a, b))

    def bwd(g):
        _acc(a, g * take_a)
        _acc(b, g * ~take_a)

    out._backward = bwd
    return out


def t_clip(a: Tensor, lo: float, hi: float) -> Tensor:
    a = constant(a)
    inside = (a.value > lo) & (a.value < hi)
    out = Tensor(np.clip(a.value, lo, hi), parents=(a,))
    out._backward = lambda g: _acc(a, g * inside)
    return out


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------


def grad_check(func: Callable[[], Tensor], params: Sequence[Tensor], epsilon: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    func rebuilds the scalar loss from `params` on every call; relative error
    per entry is |analytic - numeric| / max(|analytic|, |numeric|, 1e-12).
    """
    if not (1e-7 <= epsilon <= 1e-3):
        raise ConfigError(f"grad_check epsilon must lie in [1e-7, 1e-3], got {epsilon}")
    params = list(params)
    zero_grads(params)
    out = func()
    if out.value.shape != (1, 1) or not np.isfinite(out.value[0, 0]):
        raise NumericError("grad_check function must return a finite scalar")
    backward(out)
    worst = 0.0
    for p in params:
        analytic = p.grad.copy()
        for idx in np.ndindex(*p.value.shape):
            orig = p.value[idx]
            p.value[idx] = orig + epsilon
            f_plus = func().value[0, 0]
            p.value[idx] = orig - epsilon
            f_minus = func().value[0, 0]
            p.value[idx] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericError(f"non-finite perturbed value at {p.name}{idx}")
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            err = abs(analytic[idx] - numeric) / max(abs(analytic[idx]), abs(numeric), 1e-12)
            worst = max(worst, err)
    return worst
