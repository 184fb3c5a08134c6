'''Gated recurrence over step embeddings and the task heads.'''
import logging
from enum import Enum

import numpy as np

from .autodiff import (add, concat_rows, constant, glorot_uniform, matmul,
                       multiply, relu, sigmoid, tanh)
from .errors import ConfigurationError, ContractError, ShapeError, \
    TaskEligibilityError

logger = logging.getLogger(__name__)

DEFAULT_HIDDEN = 100
MORTALITY_WINDOW = 48
PHENOTYPE_COUNT = 25

GATES = ('input', 'forget', 'output', 'candidate')


class TaskKind(Enum):
    '''The three prediction tasks.

    * mortality: one probability from the hidden state at the end of the
      first 48 hours.
    * decompensation: one probability per step (death within 24 hours).
    * phenotyping: 25 independent probabilities from the last hidden state.
    '''
    MORTALITY = 'mortality'
    DECOMPENSATION = 'decompensation'
    PHENOTYPING = 'phenotyping'

    @property
    def out_dim(self):
        return PHENOTYPE_COUNT if self is TaskKind.PHENOTYPING else 1

    @classmethod
    def parse(cls, name):
        aliases = {'decomp': cls.DECOMPENSATION, 'pheno': cls.PHENOTYPING}
        if isinstance(name, cls):
            return name
        if name in aliases:
            return aliases[name]
        try:
            return cls(name)
        except ValueError:
            raise ConfigurationError('Unknown task "{0}"'.format(name))


class RecurrentParams(object):
    '''Gate weights ``lstm.W_<gate>`` (d x h), ``lstm.U_<gate>`` (h x h) and
    biases ``lstm.b_<gate>`` (1 x h).'''
    PREFIX = 'lstm'

    def __init__(self, params):
        self.W = {}
        self.U = {}
        self.b = {}
        for gate in GATES:
            self.W[gate] = params['{0}.W_{1}'.format(self.PREFIX, gate)]
            self.U[gate] = params['{0}.U_{1}'.format(self.PREFIX, gate)]
            self.b[gate] = params['{0}.b_{1}'.format(self.PREFIX, gate)]

    @property
    def input_dim(self):
        return self.W['input'].rows

    @property
    def hidden_size(self):
        return self.U['input'].rows

    @classmethod
    def create(cls, params, input_dim, hidden_size, rng):
        for gate in GATES:
            params.add('{0}.W_{1}'.format(cls.PREFIX, gate),
                       glorot_uniform(rng, input_dim, hidden_size))
            params.add('{0}.U_{1}'.format(cls.PREFIX, gate),
                       glorot_uniform(rng, hidden_size, hidden_size))
            params.add('{0}.b_{1}'.format(cls.PREFIX, gate),
                       np.zeros((1, hidden_size)))
        return cls(params)


class HeadParams(object):
    '''Two-layer feed-forward head ``h -> h/2 -> out`` with relu between.'''
    PREFIX = 'head'

    def __init__(self, params):
        self.W1 = params[self.PREFIX + '.W1']
        self.b1 = params[self.PREFIX + '.b1']
        self.W2 = params[self.PREFIX + '.W2']
        self.b2 = params[self.PREFIX + '.b2']

    @property
    def out_dim(self):
        return self.W2.cols

    @classmethod
    def create(cls, params, hidden_size, out_dim, rng):
        middle = max(1, hidden_size // 2)
        params.add(cls.PREFIX + '.W1', glorot_uniform(rng, hidden_size,
                                                      middle))
        params.add(cls.PREFIX + '.b1', np.zeros((1, middle)))
        params.add(cls.PREFIX + '.W2', glorot_uniform(rng, middle, out_dim))
        params.add(cls.PREFIX + '.b2', np.zeros((1, out_dim)))
        return cls(params)


def _gate(x, h, params, gate):
    return add(add(matmul(x, params.W[gate]), matmul(h, params.U[gate])),
               params.b[gate])


def recurrent_forward(steps, params):
    '''Run the gated recurrence from a zero state.

    :param steps: Step embeddings, each ``1 x d``
    :type steps: list of :class:`~kgicu.autodiff.Tensor`
    :param params: Recurrent weights
    :type params: :class:`RecurrentParams`
    :returns: the hidden state after every step, each ``1 x h``
    :rtype: list of :class:`~kgicu.autodiff.Tensor`
    '''
    if not steps:
        raise ContractError('The recurrence needs at least one step')
    h = constant(np.zeros((1, params.hidden_size)))
    c = h
    hiddens = []
    for t, x in enumerate(steps):
        if x.shape != [1, params.input_dim]:
            raise ShapeError('Step {0} has shape {1}, expected [1, {2}]'
                             .format(t, x.shape, params.input_dim))
        i = sigmoid(_gate(x, h, params, 'input'))
        f = sigmoid(_gate(x, h, params, 'forget'))
        o = sigmoid(_gate(x, h, params, 'output'))
        g = tanh(_gate(x, h, params, 'candidate'))
        c = add(multiply(f, c), multiply(i, g))
        h = multiply(o, tanh(c))
        hiddens.append(h)
    return hiddens


def head_forward(hidden, head):
    '''Logits of the head for stacked hidden states (rows).'''
    return add(matmul(relu(add(matmul(hidden, head.W1), head.b1)), head.W2),
               head.b2)


def predict(task, hiddens, head, window=MORTALITY_WINDOW):
    '''Task probabilities from the hidden states.

    :param task: Prediction task
    :type task: :class:`TaskKind`
    :param hiddens: Output of :func:`recurrent_forward`
    :param head: Head weights, `out_dim` matching the task
    :type head: :class:`HeadParams`
    :param window: Steps consumed by the mortality task
    :returns: ``1 x 1`` for mortality, ``T x 1`` for decompensation and
        ``1 x 25`` for phenotyping
    :rtype: :class:`~kgicu.autodiff.Tensor`
    '''
    task = TaskKind.parse(task)
    if not hiddens:
        raise ContractError('No hidden states to predict from')
    if head.out_dim != task.out_dim:
        raise ShapeError('Head emits {0} values, task {1} needs {2}'
                         .format(head.out_dim, task.value, task.out_dim))
    if task is TaskKind.MORTALITY:
        if len(hiddens) < window:
            raise TaskEligibilityError(
                'Mortality needs {0} steps, the episode has {1}'
                .format(window, len(hiddens)))
        return sigmoid(head_forward(hiddens[window - 1], head))
    if task is TaskKind.DECOMPENSATION:
        return sigmoid(head_forward(concat_rows(hiddens), head))
    return sigmoid(head_forward(hiddens[-1], head))
