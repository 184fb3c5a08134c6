'''Dense tensors with tape-based reverse-mode differentiation.

Every quantity the model computes is a two-dimensional :class:`Tensor` of
64-bit floats: vectors are ``1 x d`` rows and scalars are ``1 x 1``. Operations
go through :func:`forward_op`; while a :class:`Tape` is active the operation
and its vector-Jacobian product are appended to the tape, and :func:`backward`
walks the tape in reverse to fill parameter gradients.

Reductions named ``*-rows`` reduce *over* rows: ``max-rows([[1, 5], [2, 3]])``
is ``[[2, 5]]``, one value per column.

**Example Usage:**

.. code-block:: python

    params = ParameterSet()
    w = params.add('w', [[1.0, 2.0, 3.0]])
    with Tape():
        loss = sum_rows(transpose(multiply(w, w)))
        backward(loss, params)
    w.grad  # [[2., 4., 6.]]

'''
import logging
import threading

import numpy as np

from .errors import (ContractError, DomainError, OracleError, ShapeError,
                     TapeStateError)
from .lifecycle import Event, State, StateMachine

logger = logging.getLogger(__name__)

LEAKY_SLOPE = 0.2
BCE_CLAMP = 1e-12

_active = threading.local()


class Tensor(object):
    '''Dense matrix with an optional accumulated gradient.

    :param values: Anything :func:`numpy.array` accepts. Scalars become
        ``1 x 1`` and vectors ``1 x n``.
    :param requires_grad: Whether gradients flow into this tensor
    :type requires_grad: bool
    '''
    def __init__(self, values, requires_grad=False, name=None):
        values = np.array(values, dtype=np.float64)
        if values.ndim == 0:
            values = values.reshape(1, 1)
        elif values.ndim == 1:
            values = values.reshape(1, -1)
        elif values.ndim != 2:
            raise ShapeError('Tensors are two-dimensional, got shape {0}'
                             .format(values.shape))
        if values.size == 0:
            raise DomainError('Empty tensor of shape {0}'.format(values.shape))
        self.values = values
        self.grad = None
        self.requires_grad = requires_grad
        self.tape = None
        self.name = name

    def __repr__(self):
        return '<Tensor {0} shape={1}>'.format(self.name or '', self.shape)

    @property
    def shape(self):
        return list(self.values.shape)

    @property
    def rows(self):
        return self.values.shape[0]

    @property
    def cols(self):
        return self.values.shape[1]

    def numpy(self):
        return self.values.copy()

    def item(self):
        if self.values.shape != (1, 1):
            raise ContractError('item() needs a 1 x 1 tensor, got {0}'
                                .format(self.shape))
        return float(self.values[0, 0])

    def detach(self):
        return Tensor(self.values)


def constant(values):
    '''Wrap raw values into a tensor that never receives gradients.'''
    if isinstance(values, Tensor):
        return values
    return Tensor(values)


class Tape(object):
    '''Records taped operations for one forward/backward pass.

    A tape starts in the `recording` state. :func:`backward` moves it to
    `consumed`; recording into or differentiating a consumed tape raises
    :class:`~kgicu.errors.TapeStateError` until :func:`reset` is called.

    Tapes are activated with a ``with`` block and are confined to the thread
    that activated them.
    '''
    def __init__(self):
        self.entries = []
        self.machine = self._build_machine()

    def _build_machine(self):
        recording = State('recording')
        consumed = State('consumed')
        consumed.handlers = {
            'record': self._refuse,
            'backward': self._refuse,
        }
        machine = StateMachine('tape')
        machine.add_state(recording, initial=True)
        machine.add_state(consumed)
        machine.add_transition(recording, consumed, events=['backward'],
                               action=self._clear)
        machine.add_transition(consumed, recording, events=['reset'])
        machine.add_transition(recording, None, events=['reset'],
                               action=self._clear)
        machine.initialize()
        return machine

    def _refuse(self, state, event):
        raise TapeStateError(
            'Tape already differentiated; run the forward pass again on a '
            'reset tape before calling {0}'.format(event.name))

    def _clear(self, state, event):
        self.entries = []

    @property
    def consumed(self):
        return self.machine.state.name == 'consumed'

    def record(self, output, inputs, vjp):
        self.machine.dispatch(Event('record'))
        output.tape = self
        self.entries.append((output, inputs, vjp))

    def reset(self):
        '''Clear the tape and return it to the `recording` state.'''
        self.machine.dispatch(Event('reset'))

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc_value, traceback):
        _tape_stack().pop()
        return False


class no_tape(object):
    '''Context manager that suspends recording (value-only evaluation).'''
    def __enter__(self):
        _tape_stack().append(None)
        return self

    def __exit__(self, exc_type, exc_value, traceback):
        _tape_stack().pop()
        return False


def _tape_stack():
    stack = getattr(_active, 'tapes', None)
    if stack is None:
        stack = _active.tapes = []
    return stack


def current_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


def _require_same_shape(kind, a, b):
    if a.shape != b.shape:
        raise ShapeError('{0}: shapes {1} and {2} differ'
                         .format(kind, list(a.shape), list(b.shape)))


def _op_matmul(inputs, attrs):
    a, b = inputs
    if a.shape[1] != b.shape[0]:
        raise ShapeError('matmul: inner dimensions differ, {0} x {1}'
                         .format(list(a.shape), list(b.shape)))

    def vjp(g):
        return [g.dot(b.T), a.T.dot(g)]
    return a.dot(b), vjp


def _op_add(inputs, attrs):
    a, b = inputs
    if a.shape == b.shape:
        return a + b, lambda g: [g, g]
    if b.shape[0] == 1 and b.shape[1] == a.shape[1]:
        # row-wise bias
        return a + b, lambda g: [g, g.sum(axis=0, keepdims=True)]
    raise ShapeError('add: shapes {0} and {1} are not conformable (only a '
                     '1 x n bias may broadcast)'
                     .format(list(a.shape), list(b.shape)))


def _op_multiply(inputs, attrs):
    a, b = inputs
    _require_same_shape('multiply', a, b)
    return a * b, lambda g: [g * b, g * a]


def _op_concat_rows(inputs, attrs):
    cols = set(x.shape[1] for x in inputs)
    if len(cols) != 1:
        raise ShapeError('concat-rows: column counts differ: {0}'
                         .format(sorted(cols)))
    bounds = np.cumsum([x.shape[0] for x in inputs])[:-1]

    def vjp(g):
        return np.split(g, bounds, axis=0)
    return np.concatenate(inputs, axis=0), vjp


def _softmax(x, mask):
    if np.any(mask.sum(axis=1) == 0):
        raise DomainError('row-softmax: a row has no admissible entry')
    shifted = np.where(mask, x, -np.inf)
    shifted = shifted - shifted.max(axis=1, keepdims=True)
    e = np.exp(np.where(mask, shifted, -np.inf))
    return e / e.sum(axis=1, keepdims=True)


def _op_row_softmax(inputs, attrs):
    x, = inputs
    mask = attrs.get('mask')
    if mask is None:
        mask = np.ones(x.shape, dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
        _require_same_shape('masked-row-softmax', x, mask)
    s = _softmax(x, mask)

    def vjp(g):
        return [s * (g - (g * s).sum(axis=1, keepdims=True))]
    return s, vjp


def _op_sigmoid(inputs, attrs):
    x, = inputs
    s = 0.5 * (1.0 + np.tanh(0.5 * x))
    return s, lambda g: [g * s * (1.0 - s)]


def _op_tanh(inputs, attrs):
    x, = inputs
    t = np.tanh(x)
    return t, lambda g: [g * (1.0 - t * t)]


def _op_relu(inputs, attrs):
    x, = inputs
    positive = x > 0
    return np.where(positive, x, 0.0), lambda g: [g * positive]


def _op_leaky_relu(inputs, attrs):
    x, = inputs
    slope = np.where(x > 0, 1.0, LEAKY_SLOPE)
    return x * slope, lambda g: [g * slope]


def _op_sum_rows(inputs, attrs):
    x, = inputs
    return (x.sum(axis=0, keepdims=True),
            lambda g: [np.repeat(g, x.shape[0], axis=0)])


def _op_mean_rows(inputs, attrs):
    x, = inputs
    n = float(x.shape[0])
    return (x.mean(axis=0, keepdims=True),
            lambda g: [np.repeat(g, x.shape[0], axis=0) / n])


def _op_max_rows(inputs, attrs):
    x, = inputs
    winners = x.argmax(axis=0)
    columns = np.arange(x.shape[1])

    def vjp(g):
        gx = np.zeros_like(x)
        gx[winners, columns] = g[0]
        return [gx]
    return x[winners, columns].reshape(1, -1), vjp


def _op_slice_rows(inputs, attrs):
    x, = inputs
    start, stop = attrs['start'], attrs['stop']
    if not 0 <= start < stop <= x.shape[0]:
        raise DomainError('slice-rows: [{0}, {1}) selects no rows of a '
                          '{2}-row tensor'.format(start, stop, x.shape[0]))

    def vjp(g):
        gx = np.zeros_like(x)
        gx[start:stop] = g
        return [gx]
    return x[start:stop].copy(), vjp


def _op_transpose(inputs, attrs):
    x, = inputs
    return x.T.copy(), lambda g: [g.T]


def _op_scale(inputs, attrs):
    x, = inputs
    factor = float(attrs['factor'])
    return x * factor, lambda g: [g * factor]


def _op_bce(inputs, attrs):
    p, = inputs
    y = np.asarray(attrs['labels'], dtype=np.float64).reshape(p.shape)
    clamped = np.clip(p, BCE_CLAMP, 1.0 - BCE_CLAMP)
    inside = (p >= BCE_CLAMP) & (p <= 1.0 - BCE_CLAMP)
    n = float(p.size)
    loss = -np.mean(y * np.log(clamped) + (1.0 - y) * np.log(1.0 - clamped))

    def vjp(g):
        dp = (-(y / clamped) + (1.0 - y) / (1.0 - clamped)) / n
        return [g[0, 0] * dp * inside]
    return np.array([[loss]]), vjp


_OPS = {
    'matmul': _op_matmul,
    'add': _op_add,
    'multiply': _op_multiply,
    'concat-rows': _op_concat_rows,
    'row-softmax': _op_row_softmax,
    'masked-row-softmax': _op_row_softmax,
    'sigmoid': _op_sigmoid,
    'tanh': _op_tanh,
    'relu': _op_relu,
    'leaky-relu': _op_leaky_relu,
    'sum-rows': _op_sum_rows,
    'mean-rows': _op_mean_rows,
    'max-rows': _op_max_rows,
    'slice-rows': _op_slice_rows,
    'transpose': _op_transpose,
    'scale': _op_scale,
    'bce': _op_bce,
}

OP_KINDS = tuple(sorted(_OPS))


def forward_op(kind, inputs, **attrs):
    '''Run one operation and tape it when a tape is active.

    :param kind: One of :data:`OP_KINDS`
    :type kind: str
    :param inputs: Operands
    :type inputs: list of :class:`Tensor`
    :param attrs: Operation attributes (`start`/`stop` for ``slice-rows``,
        `mask` for ``masked-row-softmax``, `factor` for ``scale``, `labels`
        for ``bce``)
    :returns: The result tensor
    :rtype: :class:`Tensor`
    '''
    if kind not in _OPS:
        raise ContractError('Unknown op kind "{0}"'.format(kind))
    if kind == 'masked-row-softmax' and attrs.get('mask') is None:
        raise ContractError('masked-row-softmax needs a mask')
    if not inputs:
        raise ContractError('{0}: no inputs'.format(kind))
    values, vjp = _OPS[kind]([x.values for x in inputs], attrs)
    output = Tensor.__new__(Tensor)
    output.values = values
    output.grad = None
    output.tape = None
    output.name = kind
    output.requires_grad = any(x.requires_grad for x in inputs)
    tape = current_tape()
    if tape is not None and output.requires_grad:
        tape.record(output, inputs, vjp)
    return output


def matmul(a, b):
    return forward_op('matmul', [a, b])


def add(a, b):
    return forward_op('add', [a, b])


def multiply(a, b):
    return forward_op('multiply', [a, b])


def concat_rows(tensors):
    if len(tensors) == 1:
        return tensors[0]
    return forward_op('concat-rows', list(tensors))


def row_softmax(x, mask=None):
    if mask is None:
        return forward_op('row-softmax', [x])
    return forward_op('masked-row-softmax', [x], mask=mask)


def sigmoid(x):
    return forward_op('sigmoid', [x])


def tanh(x):
    return forward_op('tanh', [x])


def relu(x):
    return forward_op('relu', [x])


def leaky_relu(x):
    return forward_op('leaky-relu', [x])


def sum_rows(x):
    return forward_op('sum-rows', [x])


def mean_rows(x):
    return forward_op('mean-rows', [x])


def max_rows(x):
    return forward_op('max-rows', [x])


def slice_rows(x, start, stop):
    return forward_op('slice-rows', [x], start=start, stop=stop)


def transpose(x):
    return forward_op('transpose', [x])


def scale(x, factor):
    return forward_op('scale', [x], factor=factor)


def bce(probabilities, labels):
    return forward_op('bce', [probabilities], labels=labels)


def backward(loss, params):
    '''Fill every parameter's `grad` with d(loss)/d(parameter).

    Parameters the loss does not depend on get a zero gradient. The tape the
    loss was recorded on is cleared and marked consumed.

    :param loss: ``1 x 1`` tensor produced by taped operations
    :type loss: :class:`Tensor`
    :param params: Parameters to differentiate against
    :type params: :class:`ParameterSet`
    '''
    if loss.shape != [1, 1]:
        raise ContractError('backward needs a scalar loss, got shape {0}'
                            .format(loss.shape))
    tape = loss.tape
    if tape is None:
        raise ContractError('Loss was not produced by taped operations over '
                            'parameters')
    entries = tape.entries
    tape.machine.dispatch(Event('backward'))

    grads = {id(loss): np.ones((1, 1))}
    for output, inputs, vjp in reversed(entries):
        g = grads.pop(id(output), None)
        if g is None:
            continue
        for tensor, g_input in zip(inputs, vjp(g)):
            if not tensor.requires_grad:
                continue
            key = id(tensor)
            if key in grads:
                grads[key] = grads[key] + g_input
            else:
                grads[key] = g_input
    for path, param in params.items():
        g = grads.get(id(param))
        param.grad = (np.zeros_like(param.values) if g is None
                      else np.array(g, dtype=np.float64))
    logger.debug('backward over %d taped ops', len(entries))


class ParameterSet(object):
    '''Named trainable tensors, iterated in lexicographic path order.

    Paths are dot-separated strings such as ``'gnn.0.weight'``.
    '''
    def __init__(self):
        self._params = {}

    def add(self, path, values):
        if path in self._params:
            raise ContractError('Parameter "{0}" already exists'.format(path))
        tensor = Tensor(values, requires_grad=True, name=path)
        self._params[path] = tensor
        return tensor

    def __getitem__(self, path):
        return self._params[path]

    def __contains__(self, path):
        return path in self._params

    def __len__(self):
        return len(self._params)

    def __iter__(self):
        return iter(sorted(self._params))

    def items(self):
        return [(path, self._params[path]) for path in sorted(self._params)]

    @property
    def size(self):
        return sum(p.values.size for p in self._params.values())

    def zero_grad(self):
        for param in self._params.values():
            param.grad = np.zeros_like(param.values)

    def snapshot(self):
        return dict((path, p.values.copy()) for path, p in self.items())

    def restore(self, snapshot):
        for path, param in self.items():
            values = snapshot[path]
            if values.shape != param.values.shape:
                raise ShapeError('Parameter "{0}": stored shape {1} differs '
                                 'from {2}'.format(path, list(values.shape),
                                                   param.shape))
            param.values[...] = values


def glorot_uniform(rng, rows, cols):
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


class OptimizerState(object):
    '''Adaptive-moment optimizer state for one :class:`ParameterSet`.'''
    def __init__(self, params, learning_rate=1e-4, beta1=0.9, beta2=0.999,
                 epsilon=1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step = 0
        self.first_moment = dict(
            (path, np.zeros_like(p.values)) for path, p in params.items())
        self.second_moment = dict(
            (path, np.zeros_like(p.values)) for path, p in params.items())


def optimizer_step(params, state):
    '''Apply one bias-corrected adaptive-moment update and zero the grads.'''
    for path, param in params.items():
        if param.grad is None:
            raise ContractError('Parameter "{0}" has no gradient'.format(path))
        if path not in state.first_moment:
            raise ContractError('Parameter "{0}" is unknown to the optimizer'
                                .format(path))
    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for path, param in params.items():
        g = param.grad
        m = state.first_moment[path]
        v = state.second_moment[path]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / correction1
        v_hat = v / correction2
        param.values -= (state.learning_rate * m_hat
                         / (np.sqrt(v_hat) + state.epsilon))
        param.grad = np.zeros_like(param.values)


def _evaluate(function, params):
    with no_tape():
        return function(params).item()


def numerical_gradients(function, params, eps=1e-5):
    '''Central-difference gradient of `function` for every parameter entry.'''
    numeric = {}
    for path, param in params.items():
        flat = param.values.reshape(-1)
        g = np.zeros_like(flat)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + eps
            plus = _evaluate(function, params)
            flat[i] = original - eps
            minus = _evaluate(function, params)
            flat[i] = original
            g[i] = (plus - minus) / (2.0 * eps)
        numeric[path] = g.reshape(param.values.shape)
    return numeric


def analytic_gradients(function, params):
    with Tape():
        loss = function(params)
        backward(loss, params)
    return dict((path, p.grad.copy()) for path, p in params.items())


def gradient_error(analytic, numeric):
    '''Max over entries of ``|a - n| / max(1, |n|)``.'''
    worst = 0.0
    for path in sorted(numeric):
        a = np.asarray(analytic[path])
        n = np.asarray(numeric[path])
        error = np.abs(a - n) / np.maximum(1.0, np.abs(n))
        if error.size:
            worst = max(worst, float(error.max()))
    return worst


def grad_check(function, params, eps=1e-5):
    '''Compare taped gradients with central finite differences.

    :param function: Maps `params` to a ``1 x 1`` loss, deterministically
    :param params: Parameters to check
    :type params: :class:`ParameterSet`
    :param eps: Finite-difference step
    :type eps: float
    :returns: Maximum relative error over all parameter entries
    :rtype: float
    '''
    if eps <= 0:
        raise ContractError('eps must be positive, got {0}'.format(eps))
    first = _evaluate(function, params)
    second = _evaluate(function, params)
    if first != second:
        raise OracleError('Function is not deterministic: {0!r} != {1!r}'
                          .format(first, second))
    analytic = analytic_gradients(function, params)
    numeric = numerical_gradients(function, params, eps)
    error = gradient_error(analytic, numeric)
    logger.debug('grad_check over %d entries: %.3g', params.size, error)
    return error
