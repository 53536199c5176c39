"""Dense float64 tensors with reverse-mode differentiation.

Every primitive builds its output through :func:`make_result`, which wires the
output to its parents and a backward closure and, when a :class:`Tape` is
active, appends a :class:`Record`. :func:`backward` sweeps either the tape (in
reverse recording order) or a topological sort of the graph.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when a primitive receives incompatible extents."""

    def __init__(self, primitive: str, message: str):
        super().__init__(f"{primitive}: {message}")
        self.primitive = primitive


class NonFiniteError(FloatingPointError):
    def __init__(self, primitive: str, message: str = "non-finite values"):
        super().__init__(f"{primitive}: {message}")
        self.primitive = primitive


_state = {"grad": True, "tape": None, "check_finite": True}


@contextlib.contextmanager
def no_grad():
    prev = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = prev


def grad_enabled() -> bool:
    return _state["grad"]


def set_finite_checks(enabled: bool) -> bool:
    """Toggle the per-primitive finiteness check; returns the previous setting."""
    prev = _state["check_finite"]
    _state["check_finite"] = bool(enabled)
    return prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "op", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.array(data, dtype=np.float64) if not isinstance(data, np.ndarray) or data.dtype != np.float64 else data
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.parents: tuple = ()
        self.backward_fn: Optional[Callable] = None
        self.op = "leaf"
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    # operator sugar; the primitives live in ops.py
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __pow__(self, exponent):
        from . import ops
        return ops.power(self, exponent)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Record:
    op: str
    inputs: tuple
    output: int
    out_ref: Tensor = field(repr=False)


class Tape:
    """Ordered log of primitive applications.

    >>> with Tape() as tape:
    ...     y = ops.sum(x * x)
    >>> tape.backward(y)
    """

    def __init__(self):
        self.records: list[Record] = []
        self._prev = None

    def __enter__(self) -> "Tape":
        self._prev = _state["tape"]
        _state["tape"] = self
        return self

    def __exit__(self, *exc) -> None:
        _state["tape"] = self._prev

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, loss: Tensor) -> None:
        backward(loss, tape=self)


def make_result(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    if _state["check_finite"] and not np.isfinite(data).all():
        raise NonFiniteError(op, "produced non-finite output")
    out = Tensor(data)
    if _state["grad"] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
        out.op = op
        tape = _state["tape"]
        if tape is not None:
            tape.records.append(Record(op, tuple(id(p) for p in parents), id(out), out))
    else:
        out.op = op
    return out


def check_inputs(op: str, *tensors: Tensor) -> None:
    if not _state["check_finite"]:
        return
    for t in tensors:
        if t.op == "leaf" and not np.isfinite(t.data).all():
            raise NonFiniteError(op, "non-finite input")


def _toposort(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, tape: Optional[Tape] = None) -> None:
    """Accumulate dloss/dt into ``t.grad`` for every requires_grad tensor reaching ``loss``."""
    if loss.data.size != 1:
        raise ShapeError("backward", f"loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    if tape is not None:
        nodes = [r.out_ref for r in tape.records]
        if not nodes or nodes[-1] is not loss:
            if loss not in nodes:
                raise ValueError("backward: loss was not recorded on this tape")
    else:
        nodes = _toposort(loss)

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        if node.backward_fn is None:
            continue
        parent_grads = node.backward_fn(g)
        for p, pg in zip(node.parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            if p.backward_fn is None:
                leaves[id(p)] = p
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    # leaves are not on the tape/toposort when reached only through parents
    for key, g in grads.items():
        leaf = leaves.get(key)
        if leaf is not None:
            leaf.grad = g if leaf.grad is None else leaf.grad + g
