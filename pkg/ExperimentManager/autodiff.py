"""
Dense-matrix reverse-mode automatic differentiation.

Every value is a 2-D float64 numpy array bound to a node of a Tape. Operations
record their inputs and an adjoint rule; Tape.backward walks the record once in
reverse order. A tape can only be consumed once: build a new tape (fresh
forward pass) for every gradient computation.

The gradient-penalty construct `mlp_input_gradient` expresses the input
gradient of an ELU MLP with ordinary graph nodes, so a later backward pass gives
exact parameter gradients of any function of that input gradient.
"""
import itertools
import logging

import numpy as np

from .exceptions import ContractError, DimensionError, DomainError, TapeError

logger = logging.getLogger('experiment_logger')

ELU_ALPHA = 1.0


def as_matrix(data, name='matrix'):
    """Copy external data into a validated float64 matrix."""
    matrix = np.array(data, dtype=np.float64)
    if matrix.ndim == 1:
        matrix = matrix.reshape(-1, 1)
    if matrix.ndim != 2:
        raise DimensionError(f'{name} must be 2-D, got shape {matrix.shape}')
    if not np.all(np.isfinite(matrix)):
        raise DomainError(f'{name} contains NaN or infinite entries')
    return matrix


class GraphValue:
    __slots__ = ('value', 'tape', 'node_id', 'requires_grad', 'name')

    def __init__(self, value, tape, node_id, requires_grad, name=None):
        self.value = value
        self.tape = tape
        self.node_id = node_id
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def rows(self):
        return self.value.shape[0]

    @property
    def cols(self):
        return self.value.shape[1]

    def item(self):
        return float(self.value.reshape(-1)[0])

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return negate(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        label = f' {self.name}' if self.name else ''
        return f'GraphValue(#{self.node_id}{label}, shape={self.shape}, requires_grad={self.requires_grad})'


class Tape:
    """Ordered record of operations, confined to a single worker."""

    def __init__(self):
        self._ids = itertools.count()
        self._nodes = []
        self._grads = None
        self.consumed = False

    def __len__(self):
        return len(self._nodes)

    def leaf(self, data, requires_grad=False, name=None):
        return GraphValue(as_matrix(data, name or 'leaf'), self, next(self._ids), requires_grad, name)

    def constant(self, data, name=None):
        return self.leaf(data, requires_grad=False, name=name)

    def record(self, value, inputs, backward):
        requires_grad = any(node.requires_grad for node in inputs)
        out = GraphValue(value, self, next(self._ids), requires_grad)
        # Nodes nothing differentiable flows into are never visited backwards.
        if requires_grad:
            self._nodes.append((out, inputs, backward))
        return out

    def backward(self, loss):
        if loss.tape is not self:
            raise ContractError('loss does not belong to this tape')
        if self.consumed:
            raise TapeError('backward already ran on this tape; run a new forward pass first')
        if loss.shape != (1, 1):
            raise DimensionError(f'backward needs a scalar loss, got shape {loss.shape}')
        self.consumed = True
        grads = {loss.node_id: np.ones_like(loss.value)}
        for out, inputs, adjoint in reversed(self._nodes):
            upstream = grads.get(out.node_id)
            if upstream is None:
                continue
            for node, contribution in zip(inputs, adjoint(upstream)):
                if not node.requires_grad or contribution is None:
                    continue
                if node.node_id in grads:
                    grads[node.node_id] = grads[node.node_id] + contribution
                else:
                    grads[node.node_id] = contribution
        self._grads = grads
        return grads

    def grad(self, value):
        if self._grads is None:
            raise TapeError('gradients requested before backward')
        grad = self._grads.get(value.node_id)
        if grad is None:
            return np.zeros_like(value.value)
        return grad


def _tape_of(*values):
    tape = values[0].tape
    for value in values[1:]:
        if value.tape is not tape:
            raise ContractError('graph values belong to different tapes')
    return tape


def _row_broadcast(a, b, op_name):
    if a.shape == b.shape:
        return False
    if b.rows == 1 and b.cols == a.cols:
        return True
    raise DimensionError(f'{op_name}: shapes {a.shape} and {b.shape} are not compatible')


def _reduce_rows(grad, broadcast):
    return grad.sum(axis=0, keepdims=True) if broadcast else grad


def matmul(a, b):
    tape = _tape_of(a, b)
    if a.cols != b.rows:
        raise DimensionError(f'matmul: cannot multiply {a.shape} by {b.shape}')

    def backward(g):
        return g @ b.value.T, a.value.T @ g

    return tape.record(a.value @ b.value, (a, b), backward)


def add(a, b):
    tape = _tape_of(a, b)
    broadcast = _row_broadcast(a, b, 'add')

    def backward(g):
        return g, _reduce_rows(g, broadcast)

    return tape.record(a.value + b.value, (a, b), backward)


def sub(a, b):
    tape = _tape_of(a, b)
    broadcast = _row_broadcast(a, b, 'sub')

    def backward(g):
        return g, -_reduce_rows(g, broadcast)

    return tape.record(a.value - b.value, (a, b), backward)


def mul(a, b):
    tape = _tape_of(a, b)
    broadcast = _row_broadcast(a, b, 'mul')

    def backward(g):
        return g * b.value, _reduce_rows(g * a.value, broadcast)

    return tape.record(a.value * b.value, (a, b), backward)


def exp(x):
    out = np.exp(x.value)

    def backward(g):
        return (g * out,)

    return x.tape.record(out, (x,), backward)


def log(x):
    if np.any(x.value <= 0):
        raise DomainError('log of a non-positive entry')

    def backward(g):
        return (g / x.value,)

    return x.tape.record(np.log(x.value), (x,), backward)


def square(x):
    def backward(g):
        return (2.0 * x.value * g,)

    return x.tape.record(x.value * x.value, (x,), backward)


def negate(x):
    def backward(g):
        return (-g,)

    return x.tape.record(-x.value, (x,), backward)


def scale(x, factor):
    factor = float(factor)

    def backward(g):
        return (factor * g,)

    return x.tape.record(factor * x.value, (x,), backward)


def sqrt(x):
    if np.any(x.value < 0):
        raise DomainError('sqrt of a negative entry')
    out = np.sqrt(x.value)

    def backward(g):
        # zero adjoint where the root is exactly zero
        return (np.divide(g, 2.0 * out, out=np.zeros_like(g), where=out > 0),)

    return x.tape.record(out, (x,), backward)


def _elu_slope(values):
    return np.where(values > 0, 1.0, ELU_ALPHA * np.exp(np.minimum(values, 0.0)))


def elu(x):
    negative_part = ELU_ALPHA * (np.exp(np.minimum(x.value, 0.0)) - 1.0)
    out = np.where(x.value > 0, x.value, negative_part)

    def backward(g):
        return (g * _elu_slope(x.value),)

    return x.tape.record(out, (x,), backward)


def elu_grad(x):
    """ELU derivative as a differentiable node (second derivative in the adjoint)."""
    curvature = np.where(x.value > 0, 0.0, ELU_ALPHA * np.exp(np.minimum(x.value, 0.0)))

    def backward(g):
        return (g * curvature,)

    return x.tape.record(_elu_slope(x.value), (x,), backward)


def transpose(x):
    def backward(g):
        return (g.T,)

    return x.tape.record(x.value.T.copy(), (x,), backward)


ELEMENTWISE = {
    'add': add,
    'sub': sub,
    'mul': mul,
    'exp': exp,
    'log': log,
    'square': square,
    'negate': negate,
    'sqrt': sqrt,
}


def elementwise(op_kind, *args):
    try:
        op = ELEMENTWISE[op_kind]
    except KeyError:
        raise ContractError(f'unknown elementwise operation {op_kind!r}')
    return op(*args)


def reduce(op_kind, x, axis=None):
    if op_kind not in ('mean', 'sum'):
        raise ContractError(f'unknown reduction {op_kind!r}')
    if axis not in (None, 0, 1):
        raise DimensionError(f'invalid reduction axis {axis!r}')
    count = x.value.size if axis is None else x.shape[axis]
    if count == 0:
        raise DomainError(f'{op_kind} over an empty axis')
    if axis is None:
        total = x.value.sum().reshape(1, 1)
    else:
        total = x.value.sum(axis=axis, keepdims=True)
    weight = 1.0 / count if op_kind == 'mean' else 1.0
    shape = x.shape

    def backward(g):
        return (np.broadcast_to(g * weight, shape).copy(),)

    return x.tape.record(total * weight, (x,), backward)


def mean(x, axis=None):
    return reduce('mean', x, axis)


def total(x, axis=None):
    return reduce('sum', x, axis)


def concat_cols(a, b):
    tape = _tape_of(a, b)
    if a.rows != b.rows:
        raise DimensionError(f'concat_cols: row counts differ, {a.shape} and {b.shape}')
    split = a.cols

    def backward(g):
        return g[:, :split], g[:, split:]

    return tape.record(np.hstack([a.value, b.value]), (a, b), backward)


def slice_cols(x, start, stop):
    if not 0 <= start < stop <= x.cols:
        raise DimensionError(f'slice_cols: [{start}, {stop}) outside {x.shape}')
    shape = x.shape

    def backward(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return x.tape.record(x.value[:, start:stop].copy(), (x,), backward)


def split_cols(x, at):
    return slice_cols(x, 0, at), slice_cols(x, at, x.cols)


def take_rows(x, index):
    index = np.asarray(index, dtype=np.int64)
    if index.ndim != 1 or (index.size and (index.min() < -x.rows or index.max() >= x.rows)):
        raise DimensionError(f'take_rows: index out of range for {x.shape}')
    shape = x.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return x.tape.record(x.value[index], (x,), backward)


def mlp_input_gradient(layers, x):
    """
    Per-row gradient of a scalar ELU MLP with respect to its input rows.

    `layers` is a sequence of bound (weight, bias) pairs; hidden layers use ELU
    and the last layer must be a linear scalar head. The result is built from
    graph nodes: ones · W_Lᵀ, then ⊙ elu'(a_i) · W_iᵀ down to the first layer.
    """
    if not layers:
        raise ContractError('input gradient needs at least one layer')
    head_weight = layers[-1][0]
    if head_weight.cols != 1:
        raise ContractError(f'input gradient needs a scalar output head, got width {head_weight.cols}')
    tape = _tape_of(x, head_weight)

    pre_activations = []
    hidden = x
    for weight, bias in layers[:-1]:
        activation = add(matmul(hidden, weight), bias)
        pre_activations.append(activation)
        hidden = elu(activation)
    if hidden.cols != head_weight.rows:
        raise DimensionError(f'head expects {head_weight.rows} inputs, got {hidden.cols}')

    grad = matmul(tape.constant(np.ones((x.rows, 1))), transpose(head_weight))
    for (weight, _), activation in zip(reversed(layers[:-1]), reversed(pre_activations)):
        grad = matmul(mul(grad, elu_grad(activation)), transpose(weight))
    return grad


def numerical_gradient(func, point, step=1e-5):
    """Central finite differences of a scalar function of one array."""
    point = np.array(point, dtype=np.float64)
    grad = np.zeros_like(point)
    for index in np.ndindex(point.shape):
        original = point[index]
        point[index] = original + step
        upper = func(point)
        point[index] = original - step
        lower = func(point)
        point[index] = original
        grad[index] = (upper - lower) / (2.0 * step)
    return grad
