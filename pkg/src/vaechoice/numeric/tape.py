"""Reverse-mode differentiation tape.

A :class:`Tape` is an append-only list of nodes.  Each node stores its value,
the differentiable parents it was computed from and a vector-Jacobian product
closure.  Because nodes are only ever appended, indices strictly increase from
parents to children and a single reverse sweep over the list is a valid
backward pass.  Tapes are cheap; build a fresh one per forward pass.

Operations whose inputs are all plain arrays never touch a tape, so the same
model code evaluates without gradient bookkeeping when handed ``numpy`` arrays.
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractError


class Var:
    """A value recorded on a tape."""

    __slots__ = ("tape", "index", "value", "parents", "vjp")
    __array_priority__ = 1000  # ndarray <op> Var defers to Var's reflected op

    def __init__(self, tape, index, value, parents=(), vjp=None):
        self.tape = tape
        self.index = index
        self.value = value
        self.parents = parents
        self.vjp = vjp

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"Var(index={self.index}, shape={self.value.shape})"


class Tape:
    def __init__(self):
        self.nodes: list[Var] = []

    def __len__(self):
        return len(self.nodes)

    def var(self, value) -> Var:
        """Register an input (leaf) value."""
        value = np.array(value, dtype=np.float64)
        node = Var(self, len(self.nodes), value)
        self.nodes.append(node)
        return node

    def record(self, value, parents, vjp) -> Var:
        for p in parents:
            if p.tape is not self:
                raise ContractError("operands live on different tapes")
        node = Var(self, len(self.nodes), value, tuple(parents), vjp)
        self.nodes.append(node)
        return node

    def backward(self, out: Var, seed=None) -> list:
        """Gradients of ``out`` with respect to every node, indexed by node.

        ``out`` must be scalar unless an explicit ``seed`` cotangent is given.
        Nodes that ``out`` does not depend on get ``None``.
        """
        if out.tape is not self:
            raise ContractError("output was not recorded on this tape")
        if seed is None:
            if out.value.size != 1:
                raise ContractError(
                    f"gradient needs a scalar output, got shape {out.value.shape}"
                )
            seed = np.ones_like(out.value)
        grads: list = [None] * len(self.nodes)
        grads[out.index] = np.asarray(seed, dtype=np.float64)
        for node in reversed(self.nodes[: out.index + 1]):
            g = grads[node.index]
            if g is None or node.vjp is None:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if pg is None:
                    continue
                if grads[parent.index] is None:
                    grads[parent.index] = pg
                else:
                    grads[parent.index] = grads[parent.index] + pg
        return grads

    def grad(self, out: Var, wrt):
        """Gradients of scalar ``out`` with respect to the leaves in ``wrt``."""
        grads = self.backward(out)
        result = []
        for v in wrt:
            g = grads[v.index]
            result.append(np.zeros_like(v.value) if g is None else g)
        return result
