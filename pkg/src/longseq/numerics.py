"""Small dense-tensor engine with reverse-mode differentiation.

Only the operations needed by the attention variants are provided. Everything
is float64 and contiguous; values are never mutated after construction.
"""

from __future__ import annotations

import contextlib
import contextvars
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "GradCheckReport",
    "NonFiniteError",
    "matmul",
    "transpose",
    "masked_softmax",
    "avg_pool_rows",
    "take_rows",
    "concat_rows",
    "finite_difference_check",
    "no_grad",
]

_GRAD_ENABLED = contextvars.ContextVar("longseq_grad_enabled", default=True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    token = _GRAD_ENABLED.set(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.reset(token)


class NonFiniteError(ArithmeticError):
    pass


class Tensor:
    """Dense float64 array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if any(d < 1 for d in arr.shape):
            raise ValueError(f"tensor dimensions must be positive, got {arr.shape}")
        arr.setflags(write=False)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # graph plumbing

    @staticmethod
    def _result(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
        out = Tensor.__new__(Tensor)
        data = np.ascontiguousarray(data, dtype=np.float64)
        data.setflags(write=False)
        out.data = data
        out.grad = None
        out.name = None
        track = _GRAD_ENABLED.get() and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = tuple(parents) if track else ()
        out._backward = backward if track else None
        return out

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every leaf's ``grad``.

        Gradients are written into freshly allocated buffers; any previous
        ``grad`` on the leaves is replaced, not summed into.
        """
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.array(grad, dtype=np.float64).reshape(self.shape)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg

    # arithmetic

    def __add__(self, other) -> Tensor:
        other = _as_tensor(other)
        if self.shape != other.shape:
            raise ValueError(f"add: shape mismatch {self.shape} vs {other.shape}")
        return Tensor._result(self.data + other.data, (self, other), lambda g: (g, g))

    __radd__ = __add__

    def __sub__(self, other) -> Tensor:
        other = _as_tensor(other)
        if self.shape != other.shape:
            raise ValueError(f"sub: shape mismatch {self.shape} vs {other.shape}")
        return Tensor._result(self.data - other.data, (self, other), lambda g: (g, -g))

    def __neg__(self) -> Tensor:
        return self * -1.0

    def __mul__(self, other) -> Tensor:
        if isinstance(other, (int, float)):
            c = float(other)
            return Tensor._result(self.data * c, (self,), lambda g: (g * c,))
        other = _as_tensor(other)
        if self.shape != other.shape:
            raise ValueError(f"mul: shape mismatch {self.shape} vs {other.shape}")
        a, b = self.data, other.data
        return Tensor._result(a * b, (self, other), lambda g: (g * b, g * a))

    __rmul__ = __mul__

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def sum(self) -> Tensor:
        # exactly rounded, so finite differences of a summed loss see no reduction noise
        shape = self.shape
        total = math.fsum(self.data.ravel().tolist())
        return Tensor._result(np.array([total]), (self,), lambda g: (np.full(shape, g[0]),))

    def square(self) -> Tensor:
        return self * self


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _require_2d(t: Tensor, op: str) -> None:
    if len(t.shape) != 2:
        raise ValueError(f"{op}: expected a 2-d tensor, got shape {t.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _require_2d(a, "matmul")
    _require_2d(b, "matmul")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return Tensor._result(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def transpose(a: Tensor) -> Tensor:
    _require_2d(a, "transpose")
    return Tensor._result(a.data.T, (a,), lambda g: (g.T,))


def masked_softmax(scores: Tensor, mask) -> Tensor:
    """Row softmax restricted to ``mask``; disallowed entries are exactly 0.

    Raises ``ValueError`` when a row has no allowed position.
    """
    _require_2d(scores, "masked_softmax")
    allowed = np.asarray(mask, dtype=bool)
    if allowed.shape != scores.shape:
        raise ValueError(f"masked_softmax: mask shape {allowed.shape} != scores shape {scores.shape}")
    empty = ~allowed.any(axis=1)
    if empty.any():
        rows = np.flatnonzero(empty).tolist()
        raise ValueError(f"masked_softmax: rows {rows[:8]} have no allowed position")
    s = np.where(allowed, scores.data, -np.inf)
    s = s - s.max(axis=1, keepdims=True)
    e = np.where(allowed, np.exp(s), 0.0)
    p = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return Tensor._result(p, (scores,), backward)


def avg_pool_rows(x: Tensor, kernel: int, stride: int) -> Tensor:
    """Average-pool rows with windows ``[i*stride, min(i*stride+kernel, L))``.

    Output length is ``ceil(L / stride)``; trailing windows may be partial.
    """
    _require_2d(x, "avg_pool_rows")
    if kernel < 1 or stride < 1:
        raise ValueError(f"avg_pool_rows: kernel and stride must be >= 1, got {kernel}, {stride}")
    L = x.shape[0]
    if kernel == 1 and stride == 1:
        return Tensor._result(x.data, (x,), lambda g: (g,))
    n_out = -(-L // stride)
    weights = np.zeros((n_out, L))
    for i in range(n_out):
        lo = i * stride
        hi = min(lo + kernel, L)
        weights[i, lo:hi] = 1.0 / (hi - lo)
    xd = x.data
    return Tensor._result(weights @ xd, (x,), lambda g: (weights.T @ g,))


def take_rows(x: Tensor, index) -> Tensor:
    """Gather rows by integer index (duplicates allowed)."""
    _require_2d(x, "take_rows")
    idx = np.asarray(index, dtype=np.intp)
    shape = x.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return Tensor._result(x.data[idx], (x,), backward)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ValueError("concat_rows: nothing to concatenate")
    for p in parts:
        _require_2d(p, "concat_rows")
    cuts = np.cumsum([p.shape[0] for p in parts])[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=0))

    return Tensor._result(np.concatenate([p.data for p in parts], axis=0), parts, backward)


@dataclass
class GradCheckReport:
    max_relative_error: float
    per_parameter_errors: dict[str, float] = field(default_factory=dict)
    passed: bool = False
    tolerance: float = 0.0


def finite_difference_check(
    f: Callable[[], Tensor],
    params: Iterable[Tensor],
    h: float = 1e-6,
    tolerance: float = 1e-5,
    analytic: dict[str, np.ndarray] | None = None,
) -> GradCheckReport:
    """Compare reverse-mode gradients of scalar ``f()`` with central differences.

    ``f`` takes no arguments and must read the current values of ``params``.
    Elements are perturbed in place (on a private copy of each parameter's
    buffer) and restored afterwards. ``analytic`` overrides the computed
    gradients, which is how negative controls are fed in.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    params = list(params)
    names = [p.name or f"param{i}" for i, p in enumerate(params)]

    if analytic is None:
        for p in params:
            p.grad = None
        out = f()
        if out.data.size != 1:
            raise ValueError("finite_difference_check: f must return a scalar tensor")
        if not np.isfinite(out.data).all():
            raise NonFiniteError("f returned a non-finite value at the base point")
        out.backward()
        analytic = {
            n: (p.grad.copy() if p.grad is not None else np.zeros(p.shape))
            for n, p in zip(names, params)
        }

    per_param: dict[str, float] = {}
    for name, p in zip(names, params):
        base = p.data
        work = base.copy()
        numeric = np.empty_like(work)
        flat = work.reshape(-1)
        num_flat = numeric.reshape(-1)
        try:
            p.data = work
            with no_grad():
                for i in range(flat.size):
                    orig = flat[i]
                    flat[i] = orig + h
                    fp = float(f().data[0])
                    flat[i] = orig - h
                    fm = float(f().data[0])
                    flat[i] = orig
                    if not (math.isfinite(fp) and math.isfinite(fm)):
                        raise NonFiniteError(f"f is non-finite when perturbing {name}[{i}]")
                    num_flat[i] = (fp - fm) / (2.0 * h)
        finally:
            p.data = base
        a = np.asarray(analytic[name], dtype=np.float64).reshape(numeric.shape)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-12)
        per_param[name] = float(np.max(np.abs(a - numeric) / denom))

    worst = max(per_param.values()) if per_param else 0.0
    return GradCheckReport(
        max_relative_error=worst,
        per_parameter_errors=per_param,
        passed=worst < tolerance,
        tolerance=tolerance,
    )
