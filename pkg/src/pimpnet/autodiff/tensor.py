"""Dense tensors and a define-by-run tape for reverse-mode differentiation."""
import contextlib
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

_DTYPE = np.float32
_TAPE: Optional["Tape"] = None


def default_dtype():
    return _DTYPE


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the storage dtype of newly created tensors.

    Gradient checks run under ``precision(np.float64)``; everything else uses
    float32.
    """
    global _DTYPE
    prev = _DTYPE
    _DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        _DTYPE = prev


class Tensor:
    """A dense row-major array with an optional gradient slot.

    ``tape_id`` is the index of the tape node that produced the tensor, or
    ``None`` for leaves.
    """

    __slots__ = ("data", "requires_grad", "grad", "tape_id", "name")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.array(data, dtype=dtype or _DTYPE, copy=True)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.tape_id: Optional[int] = None
        self.name = name

    @classmethod
    def _wrap(cls, arr):
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t.tape_id = None
        t.name = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; implementations live in ops
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

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)


@dataclass
class Node:
    inputs: Sequence[Tensor]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; operations executed inside the block whose inputs
    require gradients are appended to ``nodes``. Append order is a valid
    topological order because a node's inputs exist before it runs.
    """

    nodes: List[Node] = field(default_factory=list)
    _prev: Optional["Tape"] = field(default=None, repr=False)

    def __enter__(self):
        global _TAPE
        self._prev = _TAPE
        _TAPE = self
        return self

    def __exit__(self, *exc):
        global _TAPE
        _TAPE = self._prev
        self._prev = None
        return False

    def record(self, inputs, output, backward_fn):
        output.tape_id = len(self.nodes)
        output.requires_grad = True
        self.nodes.append(Node(tuple(inputs), output, backward_fn))
        return output.tape_id


def current_tape():
    return _TAPE


def make_result(arr, inputs, backward_fn):
    """Wrap ``arr`` as an op output and record it if any input needs gradients."""
    out = Tensor._wrap(arr)
    if _TAPE is not None and any(isinstance(t, Tensor) and t.requires_grad for t in inputs):
        _TAPE.record(inputs, out, backward_fn)
    return out


def backward(tape: Tape, loss: Tensor):
    """Populate ``.grad`` on every leaf that requires gradients.

    Leaves reachable from ``loss`` receive their reverse-mode gradient
    (accumulated into any existing ``.grad``); leaves recorded on the tape but
    not reachable receive zeros.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.tape_id is None or loss.tape_id >= len(tape.nodes) or tape.nodes[loss.tape_id].output is not loss:
        raise ValueError("loss was not produced on this tape")

    grads = {id(loss): np.ones_like(loss.data)}
    leaves = {}
    for node in tape.nodes[: loss.tape_id + 1]:
        for t in node.inputs:
            if isinstance(t, Tensor) and t.requires_grad and t.tape_id is None:
                leaves[id(t)] = t

    for node in reversed(tape.nodes[: loss.tape_id + 1]):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        in_grads = node.backward(g)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not isinstance(t, Tensor) or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi

    for key, leaf in leaves.items():
        g = grads.get(key)
        if g is None:
            g = np.zeros_like(leaf.data)
        g = np.asarray(g, dtype=leaf.data.dtype).reshape(leaf.shape)
        leaf.grad = g if leaf.grad is None else leaf.grad + g
