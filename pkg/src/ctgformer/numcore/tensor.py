"""Dense float64 tensors plus the tape that makes them differentiable.

A ``Tensor`` wraps a numpy array. Operations from :mod:`ctgformer.numcore.ops`
combine tensors; while a ``Graph`` is active (``with Graph() as g:``) every
operation whose inputs require gradients is recorded on the tape, and
``backward`` replays the adjoints in reverse execution order. Outside a graph
the same operations run as plain numpy forward computations, which is the
inference path.
"""

from __future__ import annotations

import threading
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import GraphError, ShapeError

_local = threading.local()


def _active_graph() -> Optional["Graph"]:
    return getattr(_local, "graph", None)


class Tensor:
    """n-dimensional float64 array, optionally tracked for gradients.

    ``grad`` is populated by a backward pass and holds dLoss/dself with the
    same shape as ``data``. Values are stored row-major (numpy default).
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # Operator sugar; the heavy lifting lives in ops.py. Imported lazily to
    # avoid a circular import at module load.
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

    def __neg__(self):
        from . import ops

        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Node:
    """One recorded operation: inputs, output and the adjoint rule."""

    __slots__ = ("inputs", "output", "backward_fn", "name")

    def __init__(self, inputs: Sequence[Tensor], output: Tensor,
                 backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]],
                 name: str = "op"):
        self.inputs = tuple(inputs)
        self.output = output
        self.backward_fn = backward_fn
        self.name = name


class Graph:
    """Tape of executed operations, in execution (hence topological) order.

    One backward pass per forward pass: after ``backward`` the graph is
    consumed, and both recording and a second backward raise ``GraphError``.
    The tape is confined to the thread that opened it.
    """

    def __init__(self):
        self._nodes: list[Node] = []
        self._out_ids: set[int] = set()
        self._consumed = False
        self._prev = None

    def __enter__(self) -> "Graph":
        self._prev = _active_graph()
        _local.graph = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _local.graph = self._prev
        self._prev = None

    def record(self, node: Node) -> None:
        if self._consumed:
            raise GraphError("graph already consumed by backward; run a new forward pass")
        self._nodes.append(node)
        self._out_ids.add(id(node.output))

    def __len__(self) -> int:
        return len(self._nodes)

    def backward(self, loss: Tensor, retain_intermediate_grads: bool = True) -> None:
        """Populate ``grad`` on requires_grad tensors reachable from loss.

        With ``retain_intermediate_grads`` every such tensor gets its
        gradient; without it only leaves (tensors not produced by this
        graph, i.e. parameters) do, and tape activations are released as the
        walk passes them, which roughly halves peak training memory.
        """
        if self._consumed:
            raise GraphError("backward already run on this graph; run a new forward pass")
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        self._consumed = True

        adjoints: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        if id(loss) not in self._out_ids:
            leaves[id(loss)] = loss
        for i in range(len(self._nodes) - 1, -1, -1):
            node = self._nodes[i]
            self._nodes[i] = None   # release activations as soon as possible
            out_adj = adjoints.pop(id(node.output), None)
            if out_adj is None:
                continue
            if retain_intermediate_grads and node.output.requires_grad:
                node.output.grad = (node.output.grad + out_adj
                                    if node.output.grad is not None else out_adj.copy())
            grads = node.backward_fn(out_adj)
            for inp, g in zip(node.inputs, grads):
                if g is None or not inp.requires_grad:
                    continue
                prev = adjoints.get(id(inp))
                adjoints[id(inp)] = g if prev is None else prev + g
                if id(inp) not in self._out_ids:
                    leaves[id(inp)] = inp
        self._nodes.clear()
        for tid, t in leaves.items():
            adj = adjoints.get(tid)
            if adj is not None:
                t.grad = adj if t.grad is None else t.grad + adj


def backward(loss: Tensor, graph: Graph, retain_intermediate_grads: bool = True) -> None:
    """Reverse-mode pass over ``graph`` seeding dLoss/dLoss = 1."""
    graph.backward(loss, retain_intermediate_grads)
