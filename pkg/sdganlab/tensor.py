#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
Dense float64 arrays with reverse-mode automatic differentiation.

Only the operations needed by the networks and losses of this package are
implemented. Elementwise operations require equal shapes or a python scalar
as second operand; there is no general broadcasting.
"""

import numpy as np
from scipy.special import expit

from sdganlab.exceptions import ShapeError


class Node:
    """
    A value in a reverse-mode computation graph.

    Leaf nodes are created directly, all other nodes are the result of one
    of the operations in this module and keep a reference to their parents
    together with the local backward rule.

    Attributes
    ----------
    value : ndarray
        The float64 array held by this node.
    grad : ndarray
        Accumulated gradient of some scalar root w.r.t. this node.
        Always has the same shape as value.
    requires_grad : bool
        If False, this node never accumulates a gradient, and gradients
        are not propagated through it.
    parents : tuple
        The nodes this node was computed from. Empty for leaf nodes.
    name : str or None
        Optional name, used in error messages.

    """
    def __init__(self, value, requires_grad=False, name=None):
        value = np.array(value, dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise ValueError("Can not create leaf tensor {}: contains non-finite "
                             "entries".format(name or ""))
        self.value = value
        self.grad = np.zeros_like(value)
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.parents = ()
        self._backward = None

    @classmethod
    def _from_op(cls, value, parents, backward_fn):
        """ Output node of an operation. Non-finite values are allowed here,
        they are caught by the losses and optimizers. """
        node = cls.__new__(cls)
        node.value = np.asarray(value, dtype=np.float64)
        node.grad = np.zeros_like(node.value)
        node.requires_grad = any(p.requires_grad for p in parents)
        node.name = None
        if node.requires_grad:
            node.parents = tuple(parents)
            node._backward = backward_fn
        else:
            node.parents = ()
            node._backward = None
        return node

    @property
    def shape(self):
        return self.value.shape

    @property
    def is_leaf(self):
        return self._backward is None

    def item(self):
        """ The value of a single-element node as a python float. """
        if self.value.size != 1:
            raise ValueError("item() requires a single-element node, "
                             "got shape {}".format(self.shape))
        return float(self.value.reshape(-1)[0])

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def backward(self, retain_graph=False):
        backward(self, retain_graph=retain_graph)

    def detach(self):
        return detach(self)

    def __repr__(self):
        return "Node(shape={}, requires_grad={}{})".format(
            self.shape, self.requires_grad,
            "" if self.name is None else ", name=" + self.name)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def constant(value, name=None):
    """ A leaf node that does not require a gradient. """
    return Node(value, requires_grad=False, name=name)


def parameter(value, name=None):
    """ A leaf node that accumulates gradients. """
    return Node(value, requires_grad=True, name=name)


def _is_scalar(x):
    return isinstance(x, (int, float, np.floating, np.integer))


def _check_same_shape(op, a, b):
    if a.shape != b.shape:
        raise ShapeError("{}: shapes {} and {} do not conform".format(
            op, a.shape, b.shape))


def _check_node(op, a):
    if not isinstance(a, Node):
        raise TypeError("{}: expected a Node, got {}".format(op, type(a)))


# ------------- Elementwise binary ops -------------#


def add(a, b):
    """ a + b, with b a node of the same shape or a python scalar. """
    _check_node("add", a)
    if _is_scalar(b):
        return Node._from_op(a.value + b, (a, ), lambda g: (g, ))
    _check_node("add", b)
    _check_same_shape("add", a, b)
    return Node._from_op(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a, b):
    """ a - b, with b a node of the same shape or a python scalar. """
    _check_node("sub", a)
    if _is_scalar(b):
        return Node._from_op(a.value - b, (a, ), lambda g: (g, ))
    _check_node("sub", b)
    _check_same_shape("sub", a, b)
    return Node._from_op(a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a, b):
    """ Elementwise a * b, with b a node of the same shape or a python scalar. """
    _check_node("mul", a)
    if _is_scalar(b):
        b = float(b)
        return Node._from_op(a.value * b, (a, ), lambda g: (g * b, ))
    _check_node("mul", b)
    _check_same_shape("mul", a, b)
    a_val, b_val = a.value, b.value
    return Node._from_op(a_val * b_val, (a, b),
                         lambda g: (g * b_val, g * a_val))


def scale(a, factor):
    """ Multiply a node by a python scalar. """
    return mul(a, factor)


def matmul(a, b):
    """ Matrix product of two 2-D nodes. """
    _check_node("matmul", a)
    _check_node("matmul", b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul: shapes {} and {} do not conform".format(
            a.shape, b.shape))
    a_val, b_val = a.value, b.value
    return Node._from_op(a_val @ b_val, (a, b),
                         lambda g: (g @ b_val.T, a_val.T @ g))


def add_row(x, row):
    """
    Add the 1-D node row to every row of the 2-D node x.

    This is the only place where a value is repeated over an axis, and it
    is an explicit operation, not a broadcasting rule.

    """
    _check_node("add_row", x)
    _check_node("add_row", row)
    if x.value.ndim != 2 or row.value.ndim != 1 or x.shape[1] != row.shape[0]:
        raise ShapeError("add_row: shapes {} and {} do not conform".format(
            x.shape, row.shape))
    return Node._from_op(x.value + row.value, (x, row),
                         lambda g: (g, g.sum(axis=0)))


def linear(x, weight, bias):
    """ Affine map x @ weight + bias, with bias added to every row. """
    return add_row(matmul(x, weight), bias)


# ------------- Elementwise unary ops -------------#


def neg(a):
    _check_node("neg", a)
    return Node._from_op(-a.value, (a, ), lambda g: (-g, ))


def relu(a):
    _check_node("relu", a)
    mask = (a.value > 0).astype(np.float64)
    return Node._from_op(a.value * mask, (a, ), lambda g: (g * mask, ))


def tanh(a):
    _check_node("tanh", a)
    out = np.tanh(a.value)
    return Node._from_op(out, (a, ), lambda g: (g * (1. - out * out), ))


def square(a):
    _check_node("square", a)
    a_val = a.value
    return Node._from_op(a_val * a_val, (a, ), lambda g: (2. * a_val * g, ))


def abs(a):
    """ |a|, with the subgradient 0 at 0. """
    _check_node("abs", a)
    sign = np.sign(a.value)
    return Node._from_op(np.abs(a.value), (a, ), lambda g: (g * sign, ))


def softplus(a):
    """ log(1 + exp(a)), evaluated without overflow. """
    _check_node("softplus", a)
    a_val = a.value
    return Node._from_op(np.logaddexp(0., a_val), (a, ),
                         lambda g: (g * expit(a_val), ))


ACTIVATIONS = {
    "tanh": tanh,
    "relu": relu,
    "linear": None,
}


# ------------- Reductions and reshaping -------------#


def sum(a):
    """ Sum over all entries, giving a scalar node. """
    _check_node("sum", a)
    shape = a.shape
    return Node._from_op(np.sum(a.value), (a, ),
                         lambda g: (np.full(shape, float(g)), ))


def mean(a):
    """ Mean over all entries, giving a scalar node. """
    _check_node("mean", a)
    shape, size = a.shape, a.value.size
    return Node._from_op(np.mean(a.value), (a, ),
                         lambda g: (np.full(shape, float(g) / size), ))


def concat(nodes, axis=0):
    """ Concatenate nodes along an existing axis. """
    nodes = list(nodes)
    if len(nodes) == 0:
        raise ValueError("concat: need at least one node")
    for node in nodes:
        _check_node("concat", node)
    ref = list(nodes[0].shape)
    for node in nodes[1:]:
        other = list(node.shape)
        if len(other) != len(ref) or \
                other[:axis] + other[axis+1:] != ref[:axis] + ref[axis+1:]:
            raise ShapeError("concat: shapes {} and {} do not conform".format(
                nodes[0].shape, node.shape))
    splits = np.cumsum([node.shape[axis] for node in nodes])[:-1]

    def backward_fn(g):
        return tuple(np.split(g, splits, axis=axis))

    return Node._from_op(
        np.concatenate([node.value for node in nodes], axis=axis),
        nodes, backward_fn)


def detach(node):
    """ A new leaf with the same value, through which no gradient flows. """
    _check_node("detach", node)
    out = Node.__new__(Node)
    out.value = node.value.copy()
    out.grad = np.zeros_like(out.value)
    out.requires_grad = False
    out.name = node.name
    out.parents = ()
    out._backward = None
    return out


# ------------- Backpropagation -------------#


def _topological_order(root):
    """ All nodes requiring a gradient reachable from root, parents first. """
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(root, retain_graph=False):
    """
    Accumulate the gradient of a scalar root into all nodes that require one.

    Parameters
    ----------
    root : Node
        A node with exactly one entry.
    retain_graph : bool
        If False, the references between the nodes of the graph are
        dropped after the pass, so that a second call only reaches the root.
        If True, repeated calls accumulate the gradients again.

    """
    _check_node("backward", root)
    if root.value.size != 1:
        raise ValueError("backward: root must be a scalar, got shape "
                         "{}".format(root.shape))
    if not root.requires_grad:
        return

    order = _topological_order(root)
    pending = {id(root): np.ones_like(root.value)}
    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        node.grad = node.grad + g
        if node._backward is None:
            continue
        for parent, parent_grad in zip(node.parents, node._backward(g)):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + parent_grad
            else:
                pending[key] = parent_grad

    if not retain_graph:
        for node in order:
            if node._backward is not None:
                node.parents = ()
                node._backward = None


def zero_grad(nodes):
    for node in nodes:
        node.zero_grad()


def grad_norm(nodes):
    """ Euclidean norm of the gradients of all given nodes combined. """
    total = 0.
    for node in nodes:
        total += float(np.sum(node.grad * node.grad))
    return float(np.sqrt(total))
