"""Differentiable operations: forward arithmetic plus vector-Jacobian rules.

Each op takes the tape first; with ``tape=None`` it computes the same forward
value without recording.  Shapes follow the single-sample contracts (vectors
in, vectors/matrices out) — there is no broadcasting.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Node, Parameter, Tape, accumulate
from .errors import ConfigError


def _emit(tape, value, vjp):
    if tape is None:
        return Node(value)
    return tape.emit(value, vjp)


def constant(tape, value) -> Node:
    """Leaf node carrying a fixed array; no gradient flows out of it."""
    return Node(value)


def param_leaf(tape, p: Parameter) -> Node:
    """Inject a whole Parameter into the graph (e.g. the Tucker core)."""
    def vjp(g):
        p.grad += g
    return _emit(tape, p.value.copy(), vjp)


def embedding_lookup(tape, table: Parameter, index: int) -> Node:
    """Row `index` of the table; backward scatters into that row only."""
    rows = table.value.shape[0]
    if not 0 <= index < rows:
        raise IndexError(f"embedding index {index} outside [0, {rows})")
    def vjp(g):
        table.grad[index] += g
    return _emit(tape, table.value[index].copy(), vjp)


def outer3(tape, a: Node, b: Node, c: Node) -> Node:
    """Rank-one interaction tensor out[p,q,r] = a[p]*b[q]*c[r]."""
    va, vb, vc = a.value, b.value, c.value
    if va.ndim != 1 or vb.ndim != 1 or vc.ndim != 1:
        raise ValueError("outer3 expects three 1-d inputs")
    # left-associated broadcasting keeps the arithmetic bit-identical to the
    # (a[p]*b[q])*c[r] loop
    out = (va[:, None] * vb[None, :])[:, :, None] * vc[None, None, :]
    def vjp(g):
        accumulate(a, np.einsum("pqr,q,r->p", g, vb, vc))
        accumulate(b, np.einsum("pqr,p,r->q", g, va, vc))
        accumulate(c, np.einsum("pqr,p,q->r", g, va, vb))
    return _emit(tape, out, vjp)


def flatten(tape, t: Node) -> Node:
    """Row-major flatten of a 3-d tensor; backward is a reshape."""
    if t.value.ndim != 3:
        raise ValueError(f"flatten expects a 3-d input, got ndim {t.value.ndim}")
    shape = t.value.shape
    out = t.value.reshape(-1).copy()
    def vjp(g):
        accumulate(t, g.reshape(shape))
    return _emit(tape, out, vjp)


def linear_nobias(tape, W: Parameter, x: Node) -> Node:
    """Matrix-vector product W @ x with W of shape (out, in)."""
    if W.value.ndim != 2 or x.value.ndim != 1 or W.value.shape[1] != x.value.shape[0]:
        raise ValueError(
            f"linear_nobias shape mismatch: W {W.value.shape} vs x {x.value.shape}"
        )
    xv = x.value
    out = W.value @ xv
    def vjp(g):
        W.grad += np.outer(g, xv)
        accumulate(x, W.value.T @ g)
    return _emit(tape, out, vjp)


def outer2(tape, a: Node, b: Node) -> Node:
    """Correlation matrix out[u,w] = a[u]*b[w] for equal-length vectors."""
    va, vb = a.value, b.value
    if va.ndim != 1 or vb.ndim != 1 or va.shape != vb.shape:
        raise ValueError(f"outer2 expects equal-length vectors, got {va.shape} and {vb.shape}")
    out = np.outer(va, vb)
    def vjp(g):
        accumulate(a, g @ vb)
        accumulate(b, g.T @ va)
    return _emit(tape, out, vjp)


def softmax_rows(tape, m: Node) -> Node:
    """Row-wise softmax with per-row max subtraction for stability."""
    if m.value.ndim != 2:
        raise ValueError(f"softmax_rows expects a 2-d input, got ndim {m.value.ndim}")
    shifted = m.value - m.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)
    def vjp(g):
        accumulate(m, out * (g - (g * out).sum(axis=1, keepdims=True)))
    return _emit(tape, out, vjp)


def layer_norm(tape, x: Node, gain: Parameter, bias: Parameter, eps: float = 1e-5) -> Node:
    """Normalize to zero mean / unit population variance, then affine."""
    xv = x.value
    if xv.ndim != 1:
        raise ValueError("layer_norm expects a 1-d input")
    if gain.value.shape != xv.shape or bias.value.shape != xv.shape:
        raise ValueError("layer_norm gain/bias must match the input length")
    n = xv.shape[0]
    mu = xv.mean()
    var = xv.var()  # population variance (divide by n)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xv - mu) * inv
    out = xhat * gain.value + bias.value
    def vjp(g):
        gain.grad += g * xhat
        bias.grad += g
        gx = g * gain.value
        accumulate(x, inv * (gx - gx.mean() - xhat * (gx @ xhat) / n))
    return _emit(tape, out, vjp)


def sigmoid(tape, x: Node) -> Node:
    """Elementwise logistic function, overflow-safe on both tails."""
    z = np.exp(-np.abs(x.value))
    out = np.where(x.value >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    def vjp(g):
        accumulate(x, g * out * (1.0 - out))
    return _emit(tape, out, vjp)


def dropout(tape, x: Node, rate: float, training: bool, rng=None) -> Node:
    """Inverted dropout: zero with probability `rate`, scale survivors.

    Evaluation mode (or rate 0) is a pure identity — the input node is
    returned unchanged.
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    mask = (rng.random(x.value.shape) >= rate) / (1.0 - rate)
    out = x.value * mask
    def vjp(g):
        accumulate(x, g * mask)
    return _emit(tape, out, vjp)


def add(tape, x: Node, y: Node) -> Node:
    if x.value.shape != y.value.shape:
        raise ValueError(f"add shape mismatch: {x.value.shape} vs {y.value.shape}")
    def vjp(g):
        accumulate(x, g)
        accumulate(y, g)
    return _emit(tape, x.value + y.value, vjp)


def add_bias(tape, x: Node, b: Parameter) -> Node:
    if x.value.shape != b.value.shape:
        raise ValueError(f"add_bias shape mismatch: {x.value.shape} vs {b.value.shape}")
    def vjp(g):
        b.grad += g
        accumulate(x, g)
    return _emit(tape, x.value + b.value, vjp)


def scale(tape, x: Node, c: float) -> Node:
    def vjp(g):
        accumulate(x, g * c)
    return _emit(tape, x.value * c, vjp)


def matvec(tape, m: Node, v: Node, transpose: bool = False) -> Node:
    """m @ v (or m.T @ v), with both factors differentiable."""
    mv, vv = m.value, v.value
    if mv.ndim != 2 or vv.ndim != 1:
        raise ValueError("matvec expects a matrix and a vector")
    rows, cols = mv.shape
    if (cols if not transpose else rows) != vv.shape[0]:
        raise ValueError(f"matvec shape mismatch: {mv.shape} vs {vv.shape}")
    out = (mv.T if transpose else mv) @ vv
    def vjp(g):
        if transpose:
            accumulate(m, np.outer(vv, g))
            accumulate(v, mv @ g)
        else:
            accumulate(m, np.outer(g, vv))
            accumulate(v, mv.T @ g)
    return _emit(tape, out, vjp)


def concat(tape, parts: list) -> Node:
    if not parts:
        raise ValueError("concat needs at least one part")
    sizes = [p.value.shape[0] for p in parts]
    offsets = np.cumsum([0] + sizes)
    out = np.concatenate([p.value for p in parts])
    def vjp(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            accumulate(p, g[lo:hi])
    return _emit(tape, out, vjp)


def slice_segment(tape, x: Node, start: int, stop: int) -> Node:
    """Contiguous sub-vector x[start:stop] (used by chunked head projection)."""
    if x.value.ndim != 1 or not 0 <= start <= stop <= x.value.shape[0]:
        raise ValueError(f"invalid slice [{start}:{stop}] of vector {x.value.shape}")
    def vjp(g):
        full = np.zeros_like(x.value)
        full[start:stop] = g
        accumulate(x, full)
    return _emit(tape, x.value[start:stop].copy(), vjp)


def dot(tape, x: Node, y: Node) -> Node:
    """Full inner product of two same-shape arrays; output is 0-d."""
    if x.value.shape != y.value.shape:
        raise ValueError(f"dot shape mismatch: {x.value.shape} vs {y.value.shape}")
    xv, yv = x.value, y.value
    out = np.asarray(np.vdot(xv, yv))
    def vjp(g):
        accumulate(x, g * yv)
        accumulate(y, g * xv)
    return _emit(tape, out, vjp)


def sum_all(tape, x: Node) -> Node:
    shape = x.value.shape
    def vjp(g):
        accumulate(x, np.broadcast_to(g, shape))
    return _emit(tape, np.asarray(x.value.sum()), vjp)


def squared_error(tape, pred: Node, target: float) -> Node:
    """Half squared error 0.5*(target - pred)^2 for a size-1 prediction."""
    if pred.value.size != 1:
        raise ValueError(f"squared_error expects a scalar prediction, got {pred.value.shape}")
    diff = float(pred.value.reshape(())) - float(target)
    def vjp(g):
        accumulate(pred, np.full(pred.value.shape, float(g) * diff))
    return _emit(tape, np.asarray(0.5 * diff * diff), vjp)


def add_n(tape, nodes: list) -> Node:
    """Sum of same-shape nodes (batch loss reduction)."""
    if not nodes:
        raise ValueError("add_n needs at least one node")
    out = nodes[0].value.copy()
    for node in nodes[1:]:
        out += node.value
    def vjp(g):
        for node in nodes:
            accumulate(node, g)
    return _emit(tape, out, vjp)
