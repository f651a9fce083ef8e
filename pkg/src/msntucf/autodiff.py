"""Reverse-mode differentiation over a linear tape of numpy operations.

All arrays are C-ordered float64.  A tape belongs to one execution context;
concurrent passes need independent tapes.  Running the ops in `ops` with
``tape=None`` performs the identical forward arithmetic without recording,
which is how evaluation avoids autodiff overhead.
"""

from __future__ import annotations

import numpy as np


class Parameter:
    """Trainable array with a gradient and Adam moment buffers."""

    __slots__ = ("value", "grad", "m", "v", "name")

    def __init__(self, value, name: str = ""):
        self.value = np.ascontiguousarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter(name={self.name!r}, shape={self.value.shape})"


class Node:
    """A value produced on (or fed into) a tape."""

    __slots__ = ("value", "grad")

    def __init__(self, value):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None


def accumulate(node: Node, g: np.ndarray) -> None:
    """Add a gradient contribution; fan-out sums additively."""
    if node.grad is None:
        node.grad = np.array(g)  # own copy: g may be shared by siblings
    else:
        node.grad += g


class Tape:
    """Execution record replayed in exact reverse order by backward()."""

    __slots__ = ("_records",)

    def __init__(self):
        self._records = []  # (node, vjp) in execution order

    def emit(self, value, vjp) -> Node:
        node = Node(value)
        self._records.append((node, vjp))
        return node

    def __len__(self):
        return len(self._records)

    def backward(self, loss: Node) -> None:
        """Fill grads of every Parameter and Node reachable from `loss`."""
        if loss.value.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {loss.value.shape}")
        loss.grad = np.ones_like(loss.value)
        for node, vjp in reversed(self._records):
            if node.grad is not None:
                vjp(node.grad)


def backward(tape: Tape, loss: Node) -> None:
    tape.backward(loss)
