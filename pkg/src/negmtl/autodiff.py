"""Reverse-mode automatic differentiation over numpy float64 buffers.

A ``Tape`` records one ``Node`` per primitive operation while it is the
innermost active tape.  ``backward(loss)`` replays the recorded nodes in
exact reverse order, accumulating vector-Jacobian products into the
``grad`` buffers of leaf tensors.  There is no broadcasting beyond 0-d
scalars; shape mismatches fail loudly at the offending operation rather
than producing silently misaligned gradients.

Not thread safe: the tape stack is module-global.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np


class AutodiffError(Exception):
    pass


class DeterminismError(AutodiffError):
    """Two evaluations of the same function returned different bits."""


_TAPE_STACK: list["Tape"] = []
_NO_GRAD_DEPTH = 0


def _active_tape() -> "Tape | None":
    if _NO_GRAD_DEPTH or not _TAPE_STACK:
        return None
    return _TAPE_STACK[-1]


@contextmanager
def no_grad():
    """Disable node recording, even inside an active tape."""
    global _NO_GRAD_DEPTH
    _NO_GRAD_DEPTH += 1
    try:
        yield
    finally:
        _NO_GRAD_DEPTH -= 1


class Tape:
    """Records primitive operations for one backward pass."""

    __slots__ = ("nodes",)

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        popped = _TAPE_STACK.pop()
        if popped is not self:
            raise AutodiffError("tape stack corrupted: exited a tape that was not innermost")
        return False

    def __len__(self) -> int:
        return len(self.nodes)


class Node:
    __slots__ = ("inputs", "output", "backward")

    def __init__(self, inputs: tuple["Tensor", ...], output: "Tensor", backward: Callable):
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tensor:
    """A numpy float64 array plus gradient metadata.

    Leaf tensors are created directly (parameters, inputs); non-leaf
    tensors are produced by recorded operations and carry a reference to
    the tape that knows how to differentiate them.
    """

    __slots__ = ("data", "requires_grad", "grad", "tape")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return self.tape is None

    def item(self) -> float:
        if self.data.size != 1:
            raise AutodiffError(f"item() needs a size-1 tensor, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        flags = []
        if self.requires_grad:
            flags.append("grad")
        if not self.is_leaf:
            flags.append("taped")
        suffix = f" [{', '.join(flags)}]" if flags else ""
        return f"Tensor(shape={self.data.shape}{suffix})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make_output(data: np.ndarray, inputs: tuple[Tensor, ...], backward: Callable) -> Tensor:
    out = Tensor(data)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.tape = tape
        tape.nodes.append(Node(inputs, out, backward))
    return out


def backward(loss: Tensor):
    """Accumulate d(loss)/d(leaf) into each reachable leaf's ``grad``.

    Repeated calls keep accumulating; reset with ``zero_grad`` between
    passes.  The walk is the exact reverse of recording order, so
    gradients are bitwise reproducible for identical forward passes.
    """
    if loss.data.size != 1:
        raise AutodiffError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if loss.tape is None:
        raise AutodiffError("loss was not recorded on a tape (created outside Tape, or no_grad)")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(loss.tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for t, gt in zip(node.inputs, node.backward(g)):
            if gt is None or not t.requires_grad:
                continue
            if t.is_leaf:
                if t.grad is None:
                    t.grad = np.zeros_like(t.data)
                t.grad += gt
            else:
                acc = grads.get(id(t))
                grads[id(t)] = gt if acc is None else acc + gt


def zero_grads(tensors: Iterable[Tensor]):
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# Elementwise primitives


def _binary_shapes_ok(a: Tensor, b: Tensor, op: str):
    if a.data.shape != b.data.shape and a.data.ndim != 0 and b.data.ndim != 0:
        raise AutodiffError(
            f"{op}: shapes {a.data.shape} and {b.data.shape} differ and neither is a scalar"
        )


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # only scalar-vs-array mixing is permitted, so the reduction is total
    return g.sum().reshape(shape) if g.shape != shape else g


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes_ok(a, b, "add")
    def bw(g):
        return _reduce_to(g, a.data.shape), _reduce_to(g, b.data.shape)
    return _make_output(a.data + b.data, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes_ok(a, b, "sub")
    def bw(g):
        return _reduce_to(g, a.data.shape), _reduce_to(-g, b.data.shape)
    return _make_output(a.data - b.data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes_ok(a, b, "mul")
    na, nb = a.requires_grad, b.requires_grad
    def bw(g):
        ga = _reduce_to(g * b.data, a.data.shape) if na else None
        gb = _reduce_to(g * a.data, b.data.shape) if nb else None
        return ga, gb
    return _make_output(a.data * b.data, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return _make_output(-a.data, (a,), lambda g: (-g,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make_output(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a: Tensor) -> Tensor:
    # tanh form avoids exp overflow for large negative inputs
    out = 0.5 * (np.tanh(0.5 * a.data) + 1.0)
    return _make_output(out, (a,), lambda g: (g * out * (1.0 - out),))


# ---------------------------------------------------------------------------
# Linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise AutodiffError(f"matmul: incompatible shapes {a.data.shape} @ {b.data.shape}")
    na, nb = a.requires_grad, b.requires_grad
    def bw(g):
        ga = g @ b.data.T if na else None
        gb = a.data.T @ g if nb else None
        return ga, gb
    return _make_output(a.data @ b.data, (a, b), bw)


def matvec(w: Tensor, x: Tensor) -> Tensor:
    if w.data.ndim != 2 or x.data.ndim != 1 or w.data.shape[1] != x.data.shape[0]:
        raise AutodiffError(f"matvec: incompatible shapes {w.data.shape} @ {x.data.shape}")
    nw, nx = w.requires_grad, x.requires_grad
    def bw(g):
        gw = np.outer(g, x.data) if nw else None
        gx = w.data.T @ g if nx else None
        return gw, gx
    return _make_output(w.data @ x.data, (w, x), bw)


def add_rowvec(m: Tensor, v: Tensor) -> Tensor:
    """Add a length-c vector to every row of a (T, c) matrix."""
    if m.data.ndim != 2 or v.data.ndim != 1 or m.data.shape[1] != v.data.shape[0]:
        raise AutodiffError(f"add_rowvec: incompatible shapes {m.data.shape} + {v.data.shape}")
    return _make_output(m.data + v.data, (m, v), lambda g: (g, g.sum(axis=0)))


# ---------------------------------------------------------------------------
# Shape and indexing


def reshape(a: Tensor, shape) -> Tensor:
    orig = a.data.shape
    return _make_output(a.data.reshape(shape), (a,), lambda g: (g.reshape(orig),))


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise AutodiffError(f"transpose: expected a matrix, got shape {a.data.shape}")
    return _make_output(a.data.T.copy(), (a,), lambda g: (g.T,))


def concat(a: Tensor, b: Tensor, axis: int = 0) -> Tensor:
    if a.data.ndim != b.data.ndim:
        raise AutodiffError(f"concat: rank mismatch {a.data.shape} vs {b.data.shape}")
    split = a.data.shape[axis]
    def bw(g):
        lead = (slice(None),) * (axis % g.ndim)
        return g[lead + (slice(None, split),)], g[lead + (slice(split, None),)]
    return _make_output(np.concatenate([a.data, b.data], axis=axis), (a, b), bw)


def stack_rows(rows: Sequence[Tensor]) -> Tensor:
    """Stack T same-length vectors into a (T, d) matrix."""
    if not rows:
        raise AutodiffError("stack_rows: empty input")
    if any(r.data.ndim != 1 or r.data.shape != rows[0].data.shape for r in rows):
        raise AutodiffError("stack_rows: all inputs must be 1-d vectors of equal length")
    def bw(g):
        return tuple(g[i] for i in range(len(rows)))
    return _make_output(np.stack([r.data for r in rows]), tuple(rows), bw)


def row(a: Tensor, i: int) -> Tensor:
    if a.data.ndim != 2:
        raise AutodiffError(f"row: expected a matrix, got shape {a.data.shape}")
    def bw(g):
        ga = np.zeros_like(a.data)
        ga[i] = g
        return (ga,)
    return _make_output(a.data[i], (a,), bw)


def rows(a: Tensor, indices) -> Tensor:
    """Gather matrix rows by index; duplicate indices accumulate gradient."""
    idx = np.asarray(indices, dtype=np.intp)
    if a.data.ndim != 2 or idx.ndim != 1:
        raise AutodiffError(f"rows: expected matrix and index vector, got {a.data.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.data.shape[0]):
        raise AutodiffError(f"rows: index out of range for {a.data.shape[0]} rows")
    def bw(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)
    return _make_output(a.data[idx], (a,), bw)


def take(a: Tensor, flat_index: int) -> Tensor:
    """Select one element by flattened index, as a 0-d tensor."""
    if not 0 <= flat_index < a.data.size:
        raise AutodiffError(f"take: index {flat_index} out of range for size {a.data.size}")
    def bw(g):
        ga = np.zeros_like(a.data)
        ga.reshape(-1)[flat_index] = g
        return (ga,)
    return _make_output(a.data.reshape(-1)[flat_index].copy(), (a,), bw)


def slice2d(a: Tensor, row_range: tuple[int, int], col_range: tuple[int, int]) -> Tensor:
    """Contiguous sub-block of a matrix."""
    r0, r1 = row_range
    c0, c1 = col_range
    if a.data.ndim != 2:
        raise AutodiffError(f"slice2d: expected a matrix, got shape {a.data.shape}")
    n_rows, n_cols = a.data.shape
    if not (0 <= r0 <= r1 <= n_rows and 0 <= c0 <= c1 <= n_cols):
        raise AutodiffError(f"slice2d: bad block [{r0}:{r1}, {c0}:{c1}] of {a.data.shape}")
    def bw(g):
        ga = np.zeros_like(a.data)
        ga[r0:r1, c0:c1] = g
        return (ga,)
    return _make_output(a.data[r0:r1, c0:c1], (a,), bw)


def slice1d(a: Tensor, lo: int, hi: int) -> Tensor:
    if a.data.ndim != 1:
        raise AutodiffError(f"slice1d: expected a vector, got shape {a.data.shape}")
    if not 0 <= lo <= hi <= a.data.shape[0]:
        raise AutodiffError(f"slice1d: bad range [{lo}, {hi}) for length {a.data.shape[0]}")
    def bw(g):
        ga = np.zeros_like(a.data)
        ga[lo:hi] = g
        return (ga,)
    return _make_output(a.data[lo:hi], (a,), bw)


# ---------------------------------------------------------------------------
# Reductions and losses


def sum_all(a: Tensor) -> Tensor:
    def bw(g):
        return (np.full(a.data.shape, float(g)),)
    return _make_output(np.asarray(a.data.sum()), (a,), bw)


def logsumexp(a: Tensor, axis: int | None = None) -> Tensor:
    """Numerically stable log(sum(exp(a))) over all elements or one axis."""
    if axis is not None and (a.data.ndim != 2 or axis not in (0, 1)):
        raise AutodiffError(
            f"logsumexp: axis {axis} only supported for matrices, got shape {a.data.shape}"
        )
    m = a.data.max(axis=axis, keepdims=axis is not None)
    out = np.log(np.exp(a.data - m).sum(axis=axis, keepdims=axis is not None)) + m
    if axis is not None:
        out = out.squeeze(axis=axis)
    def bw(g):
        if axis is None:
            soft = np.exp(a.data - out)
            return (soft * float(g),)
        expanded = np.expand_dims(out, axis)
        soft = np.exp(a.data - expanded)
        return (soft * np.expand_dims(g, axis),)
    return _make_output(np.asarray(out), (a,), bw)


def max_over_time(h: Tensor) -> Tensor:
    """Column-wise max of a (T, d) matrix; ties route gradient to the
    earliest maximal row."""
    if h.data.ndim != 2 or h.data.shape[0] < 1:
        raise AutodiffError(f"max_over_time: expected a non-empty matrix, got {h.data.shape}")
    winners = h.data.argmax(axis=0)
    out = h.data[winners, np.arange(h.data.shape[1])]
    def bw(g):
        gh = np.zeros_like(h.data)
        gh[winners, np.arange(h.data.shape[1])] = g
        return (gh,)
    return _make_output(out, (h,), bw)


def softmax_cross_entropy(logits: Tensor, gold: int) -> Tensor:
    """Negative log-probability of class ``gold`` under softmax(logits)."""
    if logits.data.ndim != 1:
        raise AutodiffError(f"softmax_cross_entropy: expected a logit vector, got {logits.data.shape}")
    n = logits.data.shape[0]
    if not 0 <= gold < n:
        raise AutodiffError(f"softmax_cross_entropy: gold class {gold} out of range for {n} classes")
    m = logits.data.max()
    lse = m + np.log(np.exp(logits.data - m).sum())
    def bw(g):
        p = np.exp(logits.data - lse)
        p[gold] -= 1.0
        return (p * float(g),)
    return _make_output(np.asarray(lse - logits.data[gold]), (logits,), bw)


# ---------------------------------------------------------------------------
# Gradient checking


@dataclass(frozen=True)
class GradCheckReport:
    passed: bool
    max_rel_err: float
    n_checked: int
    worst: str | None
    h: float
    tol: float

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        worst = f" worst at {self.worst}" if self.worst else ""
        return (
            f"{status}: max relative error {self.max_rel_err:.3e} over "
            f"{self.n_checked} entries (tol {self.tol:.1e}){worst}"
        )


def grad_check(
    f: Callable[[], Tensor],
    params: dict[str, Tensor],
    h: float = 1e-5,
    tol: float = 1e-4,
) -> GradCheckReport:
    """Compare reverse-mode gradients of ``f`` against central differences.

    ``f`` must be a deterministic closure over ``params`` returning a
    scalar; determinism is verified by evaluating twice and requiring
    bitwise-identical results.  Every entry of every parameter is
    perturbed by +-h and the relative error

        |g_ad - g_fd| / max(1, |g_ad|, |g_fd|)

    must stay below ``tol``.
    """
    for name, p in params.items():
        if not p.requires_grad:
            raise AutodiffError(f"grad_check: parameter {name!r} has requires_grad=False")

    with no_grad():
        first = f().data.copy()
        second = f().data
    if first.tobytes() != second.tobytes():
        raise DeterminismError(
            "two evaluations differed bitwise; finite differences need a deterministic function"
        )

    zero_grads(params.values())
    with Tape():
        loss = f()
    backward(loss)

    max_rel = 0.0
    worst = None
    n = 0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        grad = np.zeros_like(flat) if p.grad is None else p.grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            with no_grad():
                up = float(f().data)
            flat[i] = orig - h
            with no_grad():
                down = float(f().data)
            flat[i] = orig
            fd = (up - down) / (2.0 * h)
            rel = float(abs(grad[i] - fd) / max(1.0, abs(grad[i]), abs(fd)))
            n += 1
            if rel > max_rel:
                max_rel = rel
                worst = f"{name}[{i}]"
    return GradCheckReport(max_rel < tol, max_rel, n, worst, h, tol)
