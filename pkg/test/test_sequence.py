import numpy as np
import pytest
from kgicu.autodiff import ParameterSet, bce, constant, grad_check
from kgicu.errors import (ConfigurationError, ContractError, ShapeError,
                          TaskEligibilityError)
from kgicu.sequence import (GATES, HeadParams, RecurrentParams, TaskKind,
                            head_forward, predict, recurrent_forward)


def _recurrent(input_dim=2, hidden=3, seed=0, bias=0.0):
    params = ParameterSet()
    lstm = RecurrentParams.create(params, input_dim, hidden,
                                  np.random.RandomState(seed))
    for gate in GATES:
        lstm.b[gate].values[...] = bias
    return params, lstm


def _steps(values):
    return [constant(np.atleast_2d(row)) for row in values]


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _reference(values, lstm):
    W = dict((g, lstm.W[g].values) for g in GATES)
    U = dict((g, lstm.U[g].values) for g in GATES)
    b = dict((g, lstm.b[g].values) for g in GATES)
    h = np.zeros((1, lstm.hidden_size))
    c = np.zeros_like(h)
    out = []
    for x in values:
        x = np.atleast_2d(x)

        def pre(gate):
            return x.dot(W[gate]) + h.dot(U[gate]) + b[gate]
        i, f, o = _sigmoid(pre('input')), _sigmoid(pre('forget')), \
            _sigmoid(pre('output'))
        g = np.tanh(pre('candidate'))
        c = f * c + i * g
        h = o * np.tanh(c)
        out.append(h)
    return out


def test_zero_input_keeps_zero_state():
    params, lstm = _recurrent()
    hiddens = recurrent_forward(_steps(np.zeros((5, 2))), lstm)
    assert len(hiddens) == 5
    for h in hiddens:
        np.testing.assert_array_equal(h.values, np.zeros((1, 3)))


def test_matches_gate_equations():
    params, lstm = _recurrent(bias=0.3)
    values = np.random.RandomState(1).normal(size=(4, 2))
    hiddens = recurrent_forward(_steps(values), lstm)
    for h, expected in zip(hiddens, _reference(values, lstm)):
        np.testing.assert_allclose(h.values, expected, rtol=1e-12)


def test_recurrence_is_causal():
    params, lstm = _recurrent(bias=0.1)
    values = np.random.RandomState(2).normal(size=(6, 2))
    changed = values.copy()
    changed[4:] += 10.0
    before = recurrent_forward(_steps(values), lstm)
    after = recurrent_forward(_steps(changed), lstm)
    for t in range(4):
        np.testing.assert_array_equal(before[t].values, after[t].values)
    assert not np.allclose(before[4].values, after[4].values)


def test_recurrent_errors():
    params, lstm = _recurrent()
    with pytest.raises(ContractError):
        recurrent_forward([], lstm)
    with pytest.raises(ShapeError):
        recurrent_forward([constant(np.zeros((1, 3)))], lstm)


def test_task_kind():
    assert TaskKind.parse('decomp') is TaskKind.DECOMPENSATION
    assert TaskKind.parse('pheno') is TaskKind.PHENOTYPING
    assert TaskKind.parse('mortality') is TaskKind.MORTALITY
    assert TaskKind.parse(TaskKind.MORTALITY) is TaskKind.MORTALITY
    assert TaskKind.PHENOTYPING.out_dim == 25
    assert TaskKind.DECOMPENSATION.out_dim == 1
    with pytest.raises(ConfigurationError):
        TaskKind.parse('readmission')


def _model(out_dim, seed=0):
    params, lstm = _recurrent(seed=seed, bias=0.2)
    head = HeadParams.create(params, 3, out_dim, np.random.RandomState(seed))
    return params, lstm, head


def test_head_shapes():
    params, lstm, head = _model(25)
    assert params['head.W1'].shape == [3, 1]
    assert head.out_dim == 25
    assert head_forward(constant(np.ones((4, 3))), head).shape == [4, 25]


def test_predict_shapes():
    values = np.random.RandomState(3).normal(size=(5, 2))
    params, lstm, head = _model(1)
    hiddens = recurrent_forward(_steps(values), lstm)
    assert predict(TaskKind.MORTALITY, hiddens, head, window=3).shape == [1, 1]
    decomp = predict('decomp', hiddens, head)
    assert decomp.shape == [5, 1]
    assert ((decomp.values > 0) & (decomp.values < 1)).all()

    params, lstm, head = _model(25)
    hiddens = recurrent_forward(_steps(values), lstm)
    assert predict('pheno', hiddens, head).shape == [1, 25]


def test_mortality_reads_the_window_end():
    values = np.random.RandomState(4).normal(size=(6, 2))
    params, lstm, head = _model(1)
    full = predict('mortality', recurrent_forward(_steps(values), lstm),
                   head, window=3)
    prefix = predict('mortality', recurrent_forward(_steps(values[:3]), lstm),
                     head, window=3)
    np.testing.assert_array_equal(full.values, prefix.values)


def test_decompensation_rows_follow_steps():
    values = np.random.RandomState(5).normal(size=(4, 2))
    params, lstm, head = _model(1)
    full = predict('decomp', recurrent_forward(_steps(values), lstm), head)
    prefix = predict('decomp', recurrent_forward(_steps(values[:2]), lstm),
                     head)
    np.testing.assert_allclose(full.values[:2], prefix.values)


def test_predict_errors():
    params, lstm, head = _model(1)
    hiddens = recurrent_forward(_steps(np.ones((2, 2))), lstm)
    with pytest.raises(TaskEligibilityError):
        predict('mortality', hiddens, head, window=3)
    with pytest.raises(ShapeError):
        predict('pheno', hiddens, head)
    with pytest.raises(ContractError):
        predict('decomp', [], head)


def test_grad_check_recurrence_and_head():
    params, lstm, head = _model(1, seed=6)
    values = np.random.RandomState(7).normal(size=(3, 2))
    labels = np.array([[0.0], [1.0], [1.0]])

    def loss(p):
        hiddens = recurrent_forward(_steps(values), lstm)
        return bce(predict('decomp', hiddens, head), labels)
    assert grad_check(loss, params) < 1e-4
