"""Dense float64 reverse-mode differentiation on an explicit tape.

Every primitive evaluates eagerly with numpy and, if any input needs a
gradient, appends a node to the tape holding a closure that maps the
output adjoint to input adjoints. :func:`backward` walks the tape in
reverse.

Sparse operators (scipy) and plain arrays may appear as constant operands;
only :class:`Tensor` leaves created with ``requires_grad=True`` receive
gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from mrflift.errors import NonPositiveTemperature, NonScalarLoss, ShapeMismatch


class Tape:
    """Ordered record of the operations of one forward pass."""

    def __init__(self):
        self.nodes = []
        self.leaves = []

    def leaf(self, value, requires_grad=True):
        t = Tensor(np.asarray(value, dtype=np.float64), self, requires_grad=requires_grad)
        if requires_grad:
            self.leaves.append(t)
        return t

    def constant(self, value):
        return self.leaf(value, requires_grad=False)

    def release(self):
        """Drop the recorded graph so its arrays can be freed right away.

        Nodes, closures and the tape reference each other, and the cycle
        collector runs on object counts rather than bytes, so without this
        large activations can outlive the step that made them.
        """
        for node in self.nodes:
            node._parents = ()
            node._backward = None
        self.nodes.clear()
        self.leaves.clear()

    def _record(self, value, parents, backward_fn):
        needs = any(p.requires_grad for p in parents)
        out = Tensor(value, self, requires_grad=needs)
        if needs:
            out._parents = parents
            out._backward = backward_fn
            self.nodes.append(out)
        return out


class Tensor:
    __slots__ = ("value", "tape", "requires_grad", "_parents", "_backward")

    def __init__(self, value, tape, requires_grad=False):
        self.value = value
        self.tape = tape
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _same_tape(*ts):
    tape = ts[0].tape
    for t in ts[1:]:
        if t.tape is not tape:
            raise ValueError("tensors belong to different tapes")
    return tape


def matmul(a, b):
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
    tape = _same_tape(a, b)
    av, bv = a.value, b.value
    return tape._record(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def add(a, b):
    if a.shape != b.shape:
        raise ShapeMismatch(f"add {a.shape} + {b.shape}")
    return _same_tape(a, b)._record(a.value + b.value, (a, b), lambda g: (g, g))


def add_bias(a, bias):
    """Row-wise bias: ``a[i, :] + bias``; the only broadcast supported."""
    if a.value.ndim != 2 or bias.shape != (a.shape[1],):
        raise ShapeMismatch(f"add_bias {a.shape} + {bias.shape}")
    return _same_tape(a, bias)._record(a.value + bias.value, (a, bias), lambda g: (g, g.sum(axis=0)))


def mul(a, b):
    """Elementwise product of same-shape tensors."""
    if a.shape != b.shape:
        raise ShapeMismatch(f"mul {a.shape} * {b.shape}")
    av, bv = a.value, b.value
    return _same_tape(a, b)._record(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a, c):
    c = float(c)
    return a.tape._record(a.value * c, (a,), lambda g: (g * c,))


def relu(a):
    active = a.value > 0
    return a.tape._record(np.where(active, a.value, 0.0), (a,), lambda g: (g * active,))


def concat(ts, axis=0):
    tape = _same_tape(*ts)
    sizes = [t.shape[axis] for t in ts]
    cuts = np.cumsum(sizes)[:-1]
    return tape._record(
        np.concatenate([t.value for t in ts], axis=axis),
        tuple(ts),
        lambda g: tuple(np.split(g, cuts, axis=axis)),
    )


def flatten(a):
    shape = a.shape
    return a.tape._record(a.value.reshape(-1), (a,), lambda g: (g.reshape(shape),))


def spmm(op, h):
    """``op @ h`` for a constant (sparse or dense) matrix ``op``."""
    if op.shape[1] != h.shape[0]:
        raise ShapeMismatch(f"spmm {op.shape} @ {h.shape}")
    opt = op.T
    return h.tape._record(np.asarray(op @ h.value), (h,), lambda g: (np.asarray(opt @ g),))


def neighbor_mean(mean_op, h):
    """Mean of neighbour rows; ``mean_op`` is the row-normalized adjacency."""
    return spmm(mean_op, h)


def sage_layer(h, w_self, w_nbr, mean_op):
    """Fused GraphSAGE layer ``relu(h @ w_self + (mean_op @ h) @ w_nbr)``.

    Equal to composing the separate primitives, but only the neighbour mean
    and the output are kept for the backward pass, which matters when
    ``h`` is large.
    """
    if h.value.ndim != 2 or w_self.shape != w_nbr.shape or w_self.shape[0] != h.shape[1]:
        raise ShapeMismatch(f"sage_layer h {h.shape}, w_self {w_self.shape}, w_nbr {w_nbr.shape}")
    if mean_op.shape != (h.shape[0], h.shape[0]):
        raise ShapeMismatch(f"mean operator {mean_op.shape} for {h.shape[0]} rows")
    tape = _same_tape(h, w_self, w_nbr)
    hv, ws, wn = h.value, w_self.value, w_nbr.value
    mh = np.asarray(mean_op @ hv)
    z = hv @ ws
    z += mh @ wn
    np.maximum(z, 0.0, out=z)
    out = z
    opt = mean_op.T

    def back(g):
        gz = np.where(out > 0, g, 0.0)
        gh = gz @ ws.T
        gh += np.asarray(opt @ (gz @ wn.T))
        return gh, hv.T @ gz, mh.T @ gz

    return tape._record(out, (h, w_self, w_nbr), back)


def masked_softmax(logits, mask, temperature):
    """Row-wise ``softmax((logits + mask) / temperature)``.

    ``mask`` holds 0 for allowed entries and ``-inf`` for forbidden ones, so
    forbidden entries come out as exactly 0.
    """
    if temperature <= 0:
        raise NonPositiveTemperature(f"temperature must be > 0, got {temperature}")
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != logits.shape:
        raise ShapeMismatch(f"mask {mask.shape} for logits {logits.shape}")
    z = (logits.value + mask) / temperature
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    inv_t = 1.0 / temperature

    def back(g):
        return ((g - (g * p).sum(axis=1, keepdims=True)) * p * inv_t,)

    return logits.tape._record(p, (logits,), back)


def fsum(a):
    """Exactly rounded sum of all entries (``math.fsum``), as a scalar."""
    shape = a.shape
    return a.tape._record(
        np.array(math.fsum(a.value.ravel())), (a,), lambda g: (np.full(shape, float(g)),)
    )


def inner_product(a, b):
    """Scalar ``<a, b>`` summed exactly."""
    return fsum(mul(a, b))


def _contract_subscripts(order):
    letters = "abcdefgh"[:order]
    return letters


def clique_contract(table, probs):
    """``<table, p_1 (x) p_2 (x) ... >`` for one clique, as a scalar.

    Axes are contracted in ascending order so each step shrinks the table;
    the outer-product tensor is never built.
    """
    if not isinstance(table, Tensor):
        table = probs[0].tape.constant(table)
    tape = _same_tape(table, *probs)
    order = table.value.ndim
    if len(probs) != order:
        raise ShapeMismatch(f"{len(probs)} probability rows for a {order}-way table")
    for k, p in enumerate(probs):
        if p.shape != (table.shape[k],):
            raise ShapeMismatch(f"row {k} has shape {p.shape}, table axis is {table.shape[k]}")
    t = table.value
    for p in probs:
        t = np.tensordot(p.value, t, axes=(0, 0))
    letters = _contract_subscripts(order)
    pv = [p.value for p in probs]

    def back(g):
        g = float(g)
        grads = [g * _outer(pv) if table.requires_grad else None]
        for k in range(order):
            others = [letters[l] for l in range(order) if l != k]
            spec = letters + "," + ",".join(others) + "->" + letters[k]
            grads.append(g * np.einsum(spec, table.value, *[pv[l] for l in range(order) if l != k]))
        return tuple(grads)

    return tape._record(np.asarray(t, dtype=np.float64).reshape(()), (table, *probs), back)


def _outer(rows):
    out = rows[0]
    for r in rows[1:]:
        out = np.multiply.outer(out, r)
    return out


def batched_clique_contract(tables, P, scopes):
    """Per-clique expected energy under independent rows of ``P``.

    ``tables`` is a constant array ``(m,) + (S,) * order``, ``P`` is an
    ``(n, S)`` tensor and ``scopes`` an ``(m, order)`` index array. Returns
    the length-``m`` vector ``<tables[c], (x)_k P[scopes[c, k]]>``.
    """
    tables = np.asarray(tables, dtype=np.float64)
    scopes = np.asarray(scopes, dtype=np.int64)
    m, order = scopes.shape
    S = P.shape[1]
    if tables.shape != (m,) + (S,) * order:
        raise ShapeMismatch(f"tables {tables.shape} for {m} cliques of order {order}, S={S}")
    rows = [P.value[scopes[:, k]] for k in range(order)]
    t = tables
    for r in rows:
        t = np.einsum("ma...,ma->m...", t, r)
    letters = _contract_subscripts(order)
    n = P.shape[0]

    def back(g):
        grad = np.zeros((n, S))
        for k in range(order):
            others = [l for l in range(order) if l != k]
            spec = (
                "m" + letters + "," + ",".join("m" + letters[l] for l in others)
                + "->m" + letters[k]
            )
            gk = np.einsum(spec, tables, *[rows[l] for l in others], optimize=order > 2)
            np.add.at(grad, scopes[:, k], gk * g[:, None])
        return (grad,)

    return P.tape._record(t, (P,), back)


def backward(loss, wrt=None):
    """Gradients of scalar ``loss`` for ``wrt`` (default: every leaf on its tape).

    Leaves the loss does not depend on get zero arrays.
    """
    if loss.value.size != 1:
        raise NonScalarLoss(f"loss must be scalar, got shape {loss.shape}")
    tape = loss.tape
    if wrt is None:
        wrt = tape.leaves
    adj = {id(loss): np.ones_like(loss.value)}
    for node in reversed(tape.nodes):
        g = adj.pop(id(node), None)
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            if key in adj:
                adj[key] = adj[key] + pg
            else:
                adj[key] = pg
    return [adj.get(id(t), np.zeros_like(t.value)).reshape(t.shape) for t in wrt]


@dataclass
class AdamState:
    """Bias-corrected Adam moments for a fixed list of parameter arrays."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, lr=1e-3, **kw):
        state = cls(lr=lr, **kw)
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
        return state


@njit(cache=True)
def _adam_kernel(p, g, m, v, b1, b2, step_size, sqrt_c2, eps):
    for i in range(p.size):
        gi = g[i]
        mi = b1 * m[i] + (1.0 - b1) * gi
        vi = b2 * v[i] + (1.0 - b2) * (gi * gi)
        m[i] = mi
        v[i] = vi
        p[i] -= step_size * (mi / (np.sqrt(vi) / sqrt_c2 + eps))


def adam_step(state, params, grads):
    """One Adam update, in place on ``params``; returns ``params``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeMismatch("params, grads and optimizer state differ in length")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeMismatch(f"parameter {p.shape} vs gradient {g.shape}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    step_size = state.lr / (1.0 - b1**state.step)
    sqrt_c2 = math.sqrt(1.0 - b2**state.step)
    for p, g, m, v in zip(params, grads, state.m, state.v):
        # fused single pass; params must be contiguous so ravel() is a view
        _adam_kernel(
            p.reshape(-1), np.ascontiguousarray(g, dtype=np.float64).reshape(-1),
            m.reshape(-1), v.reshape(-1), b1, b2, step_size, sqrt_c2, state.eps,
        )
    return params
