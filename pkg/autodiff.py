"""
Reverse-mode automatic differentiation over a recorded tape.

Every backward rule is written with the same differentiable operations as the
forward pass, so a gradient computed with ``create_graph=True`` lives on the
tape and can be differentiated again. PDE residuals use this to take second
spatial derivatives of a network and then differentiate the loss with respect
to the network parameters.
"""

from __future__ import annotations

import contextvars
from contextlib import contextmanager, nullcontext
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np
from scipy.special import expit

from fsi_types import AutodiffError, ShapeError

_ACTIVE_TAPE: contextvars.ContextVar[Optional["Tape"]] = contextvars.ContextVar("fsilab_active_tape", default=None)

BackwardFn = Callable[["Variable", "Variable"], Tuple[Optional["Variable"], ...]]
Operand = Union["Variable", np.ndarray, float, int]


class Tape:
    """Records operations as a DAG; node ids follow creation order."""

    def __init__(self) -> None:
        self.graph = nx.DiGraph()
        self.nodes: Dict[int, Variable] = {}
        self.recording = True
        self._next_id = 0
        self._tokens: List[contextvars.Token] = []

    def __enter__(self) -> "Tape":
        self._tokens.append(_ACTIVE_TAPE.set(self))
        return self

    def __exit__(self, *exc) -> bool:
        _ACTIVE_TAPE.reset(self._tokens.pop())
        return False

    def __len__(self) -> int:
        return len(self.nodes)

    @contextmanager
    def paused(self):
        previous = self.recording
        self.recording = False
        try:
            yield self
        finally:
            self.recording = previous

    def leaf(self, value, name: Optional[str] = None) -> "Variable":
        return Variable(value, requires_grad=True, tape=self, name=name)

    def _register(self, var: "Variable", parents: Sequence["Variable"]) -> None:
        node_id = self._next_id
        self._next_id += 1
        var.node_id = node_id
        var.tape = self
        self.nodes[node_id] = var
        self.graph.add_node(node_id, op=var.op_tag)
        for parent in parents:
            self.graph.add_edge(parent.node_id, node_id)


def active_tape() -> Optional[Tape]:
    return _ACTIVE_TAPE.get()


class Variable:
    """A float64 array, optionally recorded as a node of a tape."""

    # ndarray <op> Variable defers to the reflected Variable method
    __array_ufunc__ = None

    def __init__(self, value, requires_grad: bool = False, tape: Optional[Tape] = None,
                 name: Optional[str] = None) -> None:
        self.value = np.array(value, dtype=np.float64) if requires_grad else np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name
        self.tape: Optional[Tape] = None
        self.node_id: Optional[int] = None
        self.parents: Tuple[Variable, ...] = ()
        self.op_tag = "leaf" if requires_grad else "const"
        self.backward_fn: Optional[BackwardFn] = None
        if requires_grad:
            tape = tape or _ACTIVE_TAPE.get()
            if tape is None:
                raise AutodiffError("a requires_grad leaf needs an active tape")
            tape._register(self, ())

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return int(self.value.size)

    @property
    def on_tape(self) -> bool:
        return self.tape is not None

    @property
    def T(self) -> "Variable":
        return transpose(self)

    def __repr__(self) -> str:
        return f"Variable(shape={self.shape}, op={self.op_tag})"

    def __add__(self, other: Operand) -> "Variable":
        return add(self, other)

    def __radd__(self, other: Operand) -> "Variable":
        return add(other, self)

    def __sub__(self, other: Operand) -> "Variable":
        return sub(self, other)

    def __rsub__(self, other: Operand) -> "Variable":
        return sub(other, self)

    def __mul__(self, other: Operand) -> "Variable":
        return mul(self, other)

    def __rmul__(self, other: Operand) -> "Variable":
        return mul(other, self)

    def __truediv__(self, other: Operand) -> "Variable":
        return div(self, other)

    def __rtruediv__(self, other: Operand) -> "Variable":
        return div(other, self)

    def __neg__(self) -> "Variable":
        return neg(self)

    def __pow__(self, exponent: float) -> "Variable":
        return power(self, exponent)

    def __matmul__(self, other: "Variable") -> "Variable":
        return matmul(self, other)

    def __rmatmul__(self, other) -> "Variable":
        return matmul(other, self)

    def __getitem__(self, index) -> "Variable":
        return take_slice(self, index)


def as_variable(x: Operand) -> Variable:
    return x if isinstance(x, Variable) else Variable(x)


def _record(value: np.ndarray, parents: Sequence[Variable], op_tag: str, backward_fn: BackwardFn) -> Variable:
    out = Variable(value)
    out.op_tag = op_tag
    tape = _ACTIVE_TAPE.get()
    tracked = [p for p in parents if p.tape is not None]
    if tape is None or not tape.recording or not tracked:
        return out
    for parent in tracked:
        if parent.tape is not tape:
            raise AutodiffError(f"operands of {op_tag} belong to a different tape")
    out.parents = tuple(parents)
    out.backward_fn = backward_fn
    tape._register(out, tracked)
    return out


def _check_elementwise(op: str, a: Variable, b: Variable) -> None:
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
        return
    raise ShapeError(f"{op}: operand shapes {a.shape} and {b.shape} are neither equal nor scalar-with-array")


def _unbroadcast(g: Variable, shape: Tuple[int, ...]) -> Variable:
    if g.shape == shape:
        return g
    return sum_(g)


# --- elementwise arithmetic -------------------------------------------------

def add(a: Operand, b: Operand) -> Variable:
    a, b = as_variable(a), as_variable(b)
    _check_elementwise("add", a, b)
    return _record(a.value + b.value, (a, b), "add",
                   lambda g, out: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Operand, b: Operand) -> Variable:
    a, b = as_variable(a), as_variable(b)
    _check_elementwise("sub", a, b)
    return _record(a.value - b.value, (a, b), "sub",
                   lambda g, out: (_unbroadcast(g, a.shape), _unbroadcast(neg(g), b.shape)))


def mul(a: Operand, b: Operand) -> Variable:
    a, b = as_variable(a), as_variable(b)
    _check_elementwise("mul", a, b)
    return _record(a.value * b.value, (a, b), "mul",
                   lambda g, out: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)))


def div(a: Operand, b: Operand) -> Variable:
    a, b = as_variable(a), as_variable(b)
    _check_elementwise("div", a, b)
    return _record(a.value / b.value, (a, b), "div",
                   lambda g, out: (_unbroadcast(g / b, a.shape),
                                   _unbroadcast(neg(g) * a / (b * b), b.shape)))


def neg(a: Operand) -> Variable:
    a = as_variable(a)
    return _record(-a.value, (a,), "neg", lambda g, out: (neg(g),))


def power(a: Operand, exponent: float) -> Variable:
    a = as_variable(a)
    if isinstance(exponent, Variable):
        raise AutodiffError("pow supports constant exponents only")
    p = float(exponent)
    if p == 1.0:
        return _record(a.value.copy(), (a,), "pow", lambda g, out: (g,))
    return _record(a.value ** p, (a,), "pow", lambda g, out: (g * (power(a, p - 1.0) * p),))


def square(a: Operand) -> Variable:
    a = as_variable(a)
    return _record(a.value * a.value, (a,), "square", lambda g, out: (g * (a * 2.0),))


def exp(a: Operand) -> Variable:
    a = as_variable(a)
    return _record(np.exp(a.value), (a,), "exp", lambda g, out: (g * out,))


def tanh(a: Operand) -> Variable:
    a = as_variable(a)
    return _record(np.tanh(a.value), (a,), "tanh", lambda g, out: (g * (1.0 - out * out),))


def sigmoid(a: Operand) -> Variable:
    a = as_variable(a)
    return _record(expit(a.value), (a,), "sigmoid", lambda g, out: (g * (out * (1.0 - out)),))


def silu(a: Operand) -> Variable:
    a = as_variable(a)
    return a * sigmoid(a)


# --- linear algebra and shape ops -------------------------------------------

def matmul(a: Operand, b: Operand) -> Variable:
    a, b = as_variable(a), as_variable(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: operand shapes {a.shape} and {b.shape} are not aligned 2-D matrices")
    return _record(a.value @ b.value, (a, b), "matmul",
                   lambda g, out: (matmul(g, transpose(b)), matmul(transpose(a), g)))


def transpose(a: Operand) -> Variable:
    a = as_variable(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a 2-D operand, got shape {a.shape}")
    return _record(a.value.T.copy(), (a,), "transpose", lambda g, out: (transpose(g),))


def reshape(a: Operand, shape: Tuple[int, ...]) -> Variable:
    a = as_variable(a)
    try:
        value = a.value.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view shape {a.shape} as {shape}") from exc
    return _record(value.copy(), (a,), "reshape", lambda g, out: (reshape(g, a.shape),))


def broadcast_to(a: Operand, shape: Tuple[int, ...]) -> Variable:
    """Explicit broadcast; the only way to expand a non-scalar operand."""
    a = as_variable(a)
    shape = tuple(shape)
    try:
        value = np.broadcast_to(a.value, shape).copy()
    except ValueError as exc:
        raise ShapeError(f"broadcast_to: cannot broadcast shape {a.shape} to {shape}") from exc
    return _record(value, (a,), "broadcast_to", lambda g, out: (sum_to(g, a.shape),))


def sum_to(g: Variable, shape: Tuple[int, ...]) -> Variable:
    """Reduce a broadcast result back to ``shape`` (adjoint of broadcast_to)."""
    if g.shape == tuple(shape):
        return g
    lead = g.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        lead + i for i, size in enumerate(shape) if size == 1 and g.shape[lead + i] != 1
    )
    return reshape(sum_(g, axis=axes), tuple(shape))


def sum_(a: Operand, axis: Union[None, int, Tuple[int, ...]] = None, keepdims: bool = False) -> Variable:
    a = as_variable(a)
    value = np.sum(a.value, axis=axis, keepdims=keepdims)
    kept_shape = np.sum(a.value, axis=axis, keepdims=True).shape

    def backward(g: Variable, out: Variable):
        return (broadcast_to(reshape(g, kept_shape), a.shape),)

    return _record(np.asarray(value, dtype=np.float64), (a,), "sum", backward)


def mean(a: Operand, axis: Union[None, int, Tuple[int, ...]] = None) -> Variable:
    a = as_variable(a)
    count = a.size if axis is None else int(np.prod([a.shape[ax] for ax in np.atleast_1d(axis)]))
    return sum_(a, axis=axis) / float(count)


def concat(parts: Sequence[Operand], axis: int = 0) -> Variable:
    parts = [as_variable(p) for p in parts]
    value = np.concatenate([p.value for p in parts], axis=axis)
    bounds = np.cumsum([0] + [p.shape[axis] for p in parts])

    def backward(g: Variable, out: Variable):
        grads = []
        for start, stop in zip(bounds[:-1], bounds[1:]):
            index = [slice(None)] * g.ndim
            index[axis] = slice(int(start), int(stop))
            grads.append(take_slice(g, tuple(index)))
        return tuple(grads)

    return _record(value, parts, "concat", backward)


def _normalize_index(index) -> tuple:
    if not isinstance(index, tuple):
        index = (index,)
    for item in index:
        if not isinstance(item, (slice, int, np.integer)) and item is not Ellipsis:
            raise AutodiffError(f"slice supports basic indexing only, got {type(item).__name__}")
    return index


def take_slice(a: Operand, index) -> Variable:
    a = as_variable(a)
    index = _normalize_index(index)
    return _record(a.value[index].copy(), (a,), "slice",
                   lambda g, out: (scatter(g, index, a.shape),))


def scatter(g: Operand, index, shape: Tuple[int, ...]) -> Variable:
    """Place ``g`` at ``index`` of a zero array; adjoint of take_slice."""
    g = as_variable(g)
    value = np.zeros(shape)
    value[index] = g.value
    return _record(value, (g,), "scatter", lambda gg, out: (take_slice(gg, index),))


def mse(a: Operand, b: Operand) -> Variable:
    return mean(square(sub(a, b)))


def custom(value, parents: Sequence[Operand], op_tag: str, backward_fn: BackwardFn) -> Variable:
    """Record one node whose value was computed outside the tape.

    ``backward_fn(g, out)`` returns one gradient per parent (or None), built
    from tape operations so that higher derivatives stay available.
    """
    return _record(np.asarray(value, dtype=np.float64), tuple(as_variable(p) for p in parents), op_tag, backward_fn)


# --- differentiation --------------------------------------------------------

def grad(output: Variable, wrt: Iterable[Variable], create_graph: bool = False) -> List[Variable]:
    """Gradients of a scalar ``output`` with respect to each variable in ``wrt``.

    With ``create_graph`` the replay is recorded, so the returned variables can be
    differentiated again.
    """
    wrt = list(wrt)
    if output.size != 1:
        raise AutodiffError(f"grad needs a scalar output, got shape {output.shape}")
    tape = output.tape
    for w in wrt:
        if not isinstance(w, Variable) or w.tape is None:
            raise AutodiffError("grad: a requested variable is not on any tape")
        if tape is not None and w.tape is not tape:
            raise AutodiffError("grad: a requested variable belongs to a different tape")
    if tape is None:
        return [Variable(np.zeros_like(w.value)) for w in wrt]

    graph = tape.graph
    ancestors = nx.ancestors(graph, output.node_id)
    ancestors.add(output.node_id)
    # one forward sweep in creation order marks the ancestors that depend on wrt
    sources = {w.node_id for w in wrt}
    needed = set()
    for node_id in sorted(ancestors):
        if node_id in sources or any(p in needed for p in graph.predecessors(node_id)):
            needed.add(node_id)

    adjoints: Dict[int, Variable] = {}
    if output.node_id in needed:
        adjoints[output.node_id] = Variable(np.ones_like(output.value))

    token = _ACTIVE_TAPE.set(tape)
    try:
        with (nullcontext() if create_graph else tape.paused()):
            for node_id in sorted(needed, reverse=True):
                node = tape.nodes[node_id]
                g = adjoints.get(node_id)
                if g is None or node.backward_fn is None:
                    continue
                parent_grads = node.backward_fn(g, node)
                for parent, pg in zip(node.parents, parent_grads):
                    if pg is None or parent.tape is None or parent.node_id not in needed:
                        continue
                    previous = adjoints.get(parent.node_id)
                    adjoints[parent.node_id] = pg if previous is None else add(previous, pg)
    finally:
        _ACTIVE_TAPE.reset(token)

    return [adjoints.get(w.node_id, Variable(np.zeros_like(w.value))) for w in wrt]


def input_gradients(output: Variable, coords: Sequence[Variable]) -> List[Variable]:
    """First derivatives of a batch output with respect to coordinate leaves.

    Batch rows must be independent, so the gradient of the summed output equals
    the per-row derivative.
    """
    return grad(sum_(output), coords, create_graph=True)


def input_derivative(net_output: Variable, input_coord: Variable, order: int) -> Variable:
    if order not in (1, 2):
        raise AutodiffError(f"input_derivative supports order 1 or 2, got {order}")
    first = input_gradients(net_output, [input_coord])[0]
    if order == 1:
        return first
    return input_gradients(first, [input_coord])[0]
