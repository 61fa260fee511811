"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Every differentiable value is a `Tensor` wrapping a C-contiguous float64
ndarray. Ops build a graph of parent references plus a backward closure;
`backward()` on a scalar walks the graph in reverse topological order and
accumulates cotangents into `.grad`. Repeated calls to `backward()` without
zeroing keep accumulating, which is the documented behaviour.

Double precision only: the verification suite needs ~1e-9 headroom that
float32 would eat. No broadcasting except bias-add over the batch axis.
"""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np


class Tensor:
    """Dense real array participating in reverse-mode differentiation."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple["Tensor", ...] = (),
        _backward: Callable[[np.ndarray], None] | None = None,
        _op: str = "leaf",
    ):
        # order="C" keeps row-major layout without promoting 0-d scalars to 1-d
        self.data = np.asarray(data, dtype=np.float64, order="C")
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self._op = _op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    """Wrap plain arrays as constant tensors; pass tensors through."""
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: tuple[Tensor, ...], bwd, op: str) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs, _parents=parents if needs else (),
                  _backward=bwd if needs else None, _op=op)


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of 2-D tensors [m,k] @ [k,n]."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out_data = a.data @ b.data

    def bwd(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(g @ b.data.T)
        if b.requires_grad:
            b.accumulate_grad(a.data.T @ g)

    return _result(out_data, (a, b), bwd, "matmul")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also accepts a 1-D bias added over the batch axis."""
    a, b = as_tensor(a), as_tensor(b)
    bias_add = a.data.ndim == 2 and b.data.ndim == 1 and b.shape[0] == a.shape[1]
    if not bias_add:
        _check_same_shape(a, b, "add")
    out_data = a.data + b.data

    def bwd(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(g.sum(axis=0) if bias_add else g)

    return _result(out_data, (a, b), bwd, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape(a, b, "sub")
    out_data = a.data - b.data

    def bwd(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(-g)

    return _result(out_data, (a, b), bwd, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product."""
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape(a, b, "mul")
    out_data = a.data * b.data

    def bwd(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(g * b.data)
        if b.requires_grad:
            b.accumulate_grad(g * a.data)

    return _result(out_data, (a, b), bwd, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    out_data = a.data * c

    def bwd(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(g * c)

    return _result(out_data, (a,), bwd, "scale")


def relu(a: Tensor) -> Tensor:
    """max(x, 0); subgradient at 0 is 0."""
    a = as_tensor(a)
    out_data = np.maximum(a.data, 0.0)

    def bwd(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(g * (a.data > 0.0))

    return _result(out_data, (a,), bwd, "relu")


def square(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out_data = a.data * a.data

    def bwd(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(g * 2.0 * a.data)

    return _result(out_data, (a,), bwd, "square")


def sum(a: Tensor) -> Tensor:  # noqa: A001 - deliberate, used as autodiff.sum
    """Sum of all elements, as a scalar tensor."""
    a = as_tensor(a)
    out_data = np.sum(a.data)

    def bwd(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(np.full_like(a.data, float(g)))

    return _result(out_data, (a,), bwd, "sum")


def mean(a: Tensor) -> Tensor:
    """Mean of all elements, as a scalar tensor."""
    a = as_tensor(a)
    out_data = np.mean(a.data)
    n = a.data.size

    def bwd(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(np.full_like(a.data, float(g) / n))

    return _result(out_data, (a,), bwd, "mean")


def row_normalize(a: Tensor, eps: float = 1e-12) -> Tensor:
    """Scale each row to unit L2 norm: z / max(||z||, eps).

    1-D input is treated as a single row. Rows with norm <= eps divide by
    the constant eps (so the zero vector maps to the zero vector).
    """
    a = as_tensor(a)
    vec = a.data.ndim == 1
    x = a.data[None, :] if vec else a.data
    if x.ndim != 2:
        raise ValueError(f"row_normalize: expected 1-D or 2-D, got shape {a.shape}")
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    denom = np.maximum(norms, eps)
    y = x / denom
    out_data = y[0] if vec else y

    def bwd(g: np.ndarray) -> None:
        if not a.requires_grad:
            return
        gm = g[None, :] if vec else g
        # d(z/n)/dz applied to g: g/n - y*(y.g)/n where the norm is active,
        # g/eps where the eps guard is active (denominator constant there).
        active = norms > eps
        inner = np.sum(y * gm, axis=1, keepdims=True)
        gz = gm / denom - np.where(active, y * inner / denom, 0.0)
        a.accumulate_grad(gz[0] if vec else gz)

    return _result(out_data, (a,), bwd, "row_normalize")


def log_softmax(a: Tensor) -> Tensor:
    """Row-wise log softmax of a 2-D tensor, max-subtraction stabilized."""
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ValueError(f"log_softmax: expected 2-D logits, got shape {a.shape}")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
    out_data = shifted - lse
    p = np.exp(out_data)

    def bwd(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(g - p * g.sum(axis=1, keepdims=True))

    return _result(out_data, (a,), bwd, "log_softmax")


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label]."""
    logits = as_tensor(logits)
    if logits.data.ndim != 2:
        raise ValueError(f"softmax_cross_entropy: expected 2-D logits, got {logits.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    b, k = logits.shape
    if labels.shape != (b,):
        raise ValueError(f"softmax_cross_entropy: labels shape {labels.shape} != ({b},)")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"softmax_cross_entropy: label out of range [0, {k})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
    log_p = shifted - lse
    out_data = -np.mean(log_p[np.arange(b), labels])
    p = np.exp(log_p)

    def bwd(g: np.ndarray) -> None:
        if logits.requires_grad:
            grad = p.copy()
            grad[np.arange(b), labels] -= 1.0
            logits.accumulate_grad(float(g) * grad / b)

    return _result(out_data, (logits,), bwd, "softmax_cross_entropy")


def detach(a: Tensor) -> Tensor:
    """Value-equal tensor cut out of the differentiation graph."""
    a = as_tensor(a)
    return Tensor(a.data.copy(), requires_grad=False, _op="detach")


def softmax(x: np.ndarray) -> np.ndarray:
    """Plain numpy row-wise softmax (no tape); used for detached signals."""
    x = np.asarray(x, dtype=np.float64)
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def backward(loss: Tensor) -> None:
    """Populate .grad on every tensor that requires grad upstream of `loss`.

    Gradients accumulate across calls; zero them between steps. Shared
    sub-expressions receive summed cotangents.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    loss.accumulate_grad(np.ones_like(loss.data))
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()
