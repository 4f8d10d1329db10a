"""Dense float64 tensors with reverse-mode automatic differentiation.

Everything in this package is built from vectors and matrices (rank 1 or 2),
so the tensor type deliberately supports nothing else.  Forward operations
run on numpy arrays; when a :class:`Tape` is active and any operand requires
gradients, the operation is recorded so that :meth:`Tape.backward` can replay
it in reverse and accumulate gradients additively across fan-out.

A tape is meant to live for a single forward/backward pass (one training
instance).  Outside any ``with Tape():`` block the same functions run in pure
inference mode with zero bookkeeping.

``finite_diff_check`` is the independent gradient oracle: it compares every
analytic gradient entry against a central difference of the loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, ShapeError

# Stack of active tapes; innermost tape records.  Training is single-threaded
# per instance, inference records nothing, so a module-level stack suffices.
_TAPE_STACK: list["Tape"] = []


class Tensor:
    """A rank-1 or rank-2 array of 64-bit reals, optionally tracked for grads."""

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        if arr.ndim not in (1, 2):
            raise ShapeError(f"tensors are rank 1 or 2, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def copy_data(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # Small operator surface so model code reads like the math it implements.
    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return affine(self, 1.0, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return affine(self, 1.0, -float(other))

    def __rsub__(self, other):
        return affine(self, -1.0, float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return affine(self, float(other), 0.0)

    __rmul__ = __mul__

    def __neg__(self):
        return affine(self, -1.0, 0.0)


def constant(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=False, name=name)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


class Tape:
    """Ordered log of executed differentiable operations.

    Nodes are ``(output_tensor, backward_fn)`` pairs; ``backward_fn`` maps the
    output gradient to ``(input_tensor, input_gradient)`` contributions.
    Replaying the log in reverse visits each operation exactly once.
    """

    __slots__ = ("_nodes",)

    def __init__(self):
        self._nodes: list[tuple[Tensor, Callable]] = []

    def __len__(self) -> int:
        return len(self._nodes)

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self, "tapes must be exited in LIFO order"

    def record(self, output: Tensor, backward: Callable) -> None:
        self._nodes.append((output, backward))

    def backward(self, loss: Tensor, params: Sequence[Tensor] | None = None):
        """Accumulate gradients of ``loss`` w.r.t. every tensor on the tape.

        Returns a dict keyed by tensor identity.  With ``params`` given, the
        result contains exactly those tensors, with explicit zero gradients
        for parameters that do not reach the loss.  Pure function of the tape:
        repeated calls return identical gradients.
        """
        if loss.size != 1:
            raise ContractError(f"loss must be scalar, got shape {loss.shape}")
        if not loss.requires_grad:
            raise ContractError("loss is not on the tape (no tracked operation produced it)")
        grads: dict[Tensor, np.ndarray] = {loss: np.ones_like(loss.data)}
        for output, backward in reversed(self._nodes):
            g_out = grads.get(output)
            if g_out is None:
                continue  # not on any path to the loss
            for tensor, contrib in backward(g_out):
                if not tensor.requires_grad:
                    continue
                prev = grads.get(tensor)
                grads[tensor] = contrib if prev is None else prev + contrib
        if params is not None:
            return {p: grads.get(p, np.zeros_like(p.data)) for p in params}
        return grads


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def apply_op(out_data: np.ndarray, inputs: Iterable[Tensor], backward: Callable) -> Tensor:
    """Wrap an op result, recording it when gradients are being tracked.

    Extension point for fused operations defined outside this module: supply
    the forward result and a ``backward(g_out) -> [(tensor, grad), ...]``
    closure and the tape machinery handles the rest.
    """
    tape = _TAPE_STACK[-1] if _TAPE_STACK else None
    if tape is not None and any(t.requires_grad for t in inputs):
        out = Tensor(out_data, requires_grad=True)
        tape.record(out, backward)
        return out
    return Tensor(out_data)


# ---------------------------------------------------------------------------
# Core operations


def matmul_bias(a: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``a @ w (+ b)`` for a: m×k, w: k×n and optional rank-1 bias of length n."""
    if a.ndim != 2 or w.ndim != 2:
        raise ShapeError(f"matmul needs matrices, got {a.shape} @ {w.shape}")
    if a.shape[1] != w.shape[0]:
        raise ShapeError(f"inner dimensions disagree: {a.shape} @ {w.shape}")
    out = a.data @ w.data
    if b is not None:
        if b.ndim != 1 or b.shape[0] != w.shape[1]:
            raise ShapeError(f"bias shape {b.shape} does not match output width {w.shape[1]}")
        out = out + b.data

    def backward(g):
        contribs = [(a, g @ w.data.T), (w, a.data.T @ g)]
        if b is not None:
            contribs.append((b, g.sum(axis=0)))
        return contribs

    operands = (a, w) if b is None else (a, w, b)
    return apply_op(out, operands, backward)


def matmul(a: Tensor, w: Tensor) -> Tensor:
    return matmul_bias(a, w, None)


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ShapeError(f"transpose needs a matrix, got shape {x.shape}")
    return apply_op(x.data.T.copy(), (x,), lambda g: [(x, g.T)])


def add(x: Tensor, y: Tensor) -> Tensor:
    """Elementwise sum; also accepts a broadcastable row (1×n or length n) as y."""
    if x.shape == y.shape:
        return apply_op(x.data + y.data, (x, y), lambda g: [(x, g), (y, g)])
    if x.ndim == 2 and y.shape in ((1, x.shape[1]), (x.shape[1],)):
        def backward(g):
            return [(x, g), (y, g.sum(axis=0).reshape(y.shape))]
        return apply_op(x.data + y.data.reshape(1, -1), (x, y), backward)
    raise ShapeError(f"cannot add shapes {x.shape} and {y.shape}")


def sub(x: Tensor, y: Tensor) -> Tensor:
    if x.shape != y.shape:
        raise ShapeError(f"cannot subtract shapes {x.shape} and {y.shape}")
    return apply_op(x.data - y.data, (x, y), lambda g: [(x, g), (y, -g)])


def mul(x: Tensor, y: Tensor) -> Tensor:
    if x.shape != y.shape:
        raise ShapeError(f"cannot multiply shapes {x.shape} and {y.shape}")
    return apply_op(x.data * y.data, (x, y), lambda g: [(x, g * y.data), (y, g * x.data)])


def affine(x: Tensor, scale: float, shift: float) -> Tensor:
    """``x * scale + shift`` with python-float coefficients."""
    return apply_op(x.data * scale + shift, (x,), lambda g: [(x, g * scale)])


def sigmoid(x: Tensor) -> Tensor:
    # exp of a non-positive argument only, so no overflow for any input.
    e = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))

    def backward(g):
        return [(x, g * out * (1.0 - out))]

    return apply_op(out, (x,), backward)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return apply_op(out, (x,), lambda g: [(x, g * (1.0 - out * out))])


def log(x: Tensor) -> Tensor:
    """Natural log; the caller guarantees strictly positive entries."""
    return apply_op(np.log(x.data), (x,), lambda g: [(x, g / x.data)])


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    out = np.clip(x.data, lo, hi)
    inside = (x.data >= lo) & (x.data <= hi)
    return apply_op(out, (x,), lambda g: [(x, g * inside)])


def concat_cols(x: Tensor, y: Tensor) -> Tensor:
    """Concatenate two matrices along the last (feature) axis."""
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ShapeError(f"cannot concatenate shapes {x.shape} and {y.shape} along columns")
    split = x.shape[1]

    def backward(g):
        return [(x, g[:, :split]), (y, g[:, split:])]

    return apply_op(np.concatenate((x.data, y.data), axis=1), (x, y), backward)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    if x.ndim != 2 or not (0 <= start < stop <= x.shape[1]):
        raise ShapeError(f"invalid column slice [{start}:{stop}] of shape {x.shape}")

    def backward(g):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        return [(x, full)]

    return apply_op(x.data[:, start:stop].copy(), (x,), backward)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    if x.ndim != 2 or not (0 <= start < stop <= x.shape[0]):
        raise ShapeError(f"invalid row slice [{start}:{stop}] of shape {x.shape}")

    def backward(g):
        full = np.zeros_like(x.data)
        full[start:stop, :] = g
        return [(x, full)]

    return apply_op(x.data[start:stop, :].copy(), (x,), backward)


def stack_rows(rows: Sequence[Tensor]) -> Tensor:
    """Stack row tensors (1×n or length-n) into an m×n matrix."""
    if not rows:
        raise ContractError("cannot stack an empty row list")
    out = np.vstack([r.data.reshape(1, -1) for r in rows])

    def backward(g):
        return [(r, g[i].reshape(r.shape)) for i, r in enumerate(rows)]

    return apply_op(out, rows, backward)


def row_softmax(x: Tensor) -> Tensor:
    """Softmax over each row, computed with row-max subtraction for stability."""
    if x.ndim != 2:
        raise ShapeError(f"row_softmax needs a matrix, got shape {x.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        inner = (g * out).sum(axis=1, keepdims=True)
        return [(x, out * (g - inner))]

    return apply_op(out, (x,), backward)


def sum_all(x: Tensor) -> Tensor:
    """Sum every entry into a 1×1 tensor."""
    out = np.array([[x.data.sum()]])

    def backward(g):
        return [(x, np.full(x.shape, float(g.reshape(-1)[0])))]

    return apply_op(out, (x,), backward)


# ---------------------------------------------------------------------------
# Gradient oracle


@dataclass
class GradCheckReport:
    """Outcome of comparing analytic gradients against central differences."""

    max_rel_error: float
    tol: float
    worst_param: str | None = None
    worst_index: tuple[int, ...] | None = None
    worst_analytic: float = 0.0
    worst_numeric: float = 0.0
    per_param: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol

    def __str__(self) -> str:
        status = "pass" if self.passed else "FAIL"
        where = ""
        if self.worst_param is not None:
            where = (f" (worst: {self.worst_param}{list(self.worst_index)} "
                     f"analytic={self.worst_analytic:.6g} numeric={self.worst_numeric:.6g})")
        return f"gradient check {status}: max rel error {self.max_rel_error:.3g} vs tol {self.tol:.3g}{where}"


def finite_diff_check(f: Callable[[], Tensor], params: Sequence[Tensor],
                      eps: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients of ``f`` against central differences.

    ``f`` takes no arguments, closes over ``params``, and returns a scalar
    tensor.  For each parameter entry the relative error is
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``; the report
    passes iff the maximum over all entries is within ``tol``.
    """
    if eps <= 0:
        raise ContractError(f"eps must be positive, got {eps}")
    params = list(params)

    probe_a = f().item()
    probe_b = f().item()
    if probe_a != probe_b:
        raise ContractError(
            f"f is not deterministic: two evaluations gave {probe_a!r} and {probe_b!r}")

    with Tape() as tape:
        loss = f()
        analytic = tape.backward(loss, params=params)

    report = GradCheckReport(max_rel_error=0.0, tol=tol)
    for k, p in enumerate(params):
        pname = p.name or f"param{k}"
        grad = analytic[p]
        flat = p.data.reshape(-1)
        worst_here = 0.0
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            f_plus = f().item()
            flat[j] = orig - eps
            f_minus = f().item()
            flat[j] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = grad.reshape(-1)[j]
            rel = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst_here = max(worst_here, rel)
            if rel > report.max_rel_error:
                report.max_rel_error = rel
                report.worst_param = pname
                report.worst_index = np.unravel_index(j, p.shape)
                report.worst_analytic = float(a)
                report.worst_numeric = float(numeric)
        report.per_param[pname] = worst_here
    return report


def global_norm(arrays: Iterable[np.ndarray]) -> float:
    return math.sqrt(sum(float(np.dot(a.reshape(-1), a.reshape(-1))) for a in arrays))
