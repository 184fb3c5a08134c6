import mock
import numpy as np
import pytest
from kgicu.autodiff import constant
from kgicu.data import Dataset
from kgicu.errors import (ConfigurationError, ContractError, DomainError,
                          UndefinedMetricError)
from kgicu.metrics import MetricReport, auroc
from kgicu.training import (HISTORY_FIELDS, TrainingRun, bce_loss,
                            build_model, eligible_episodes, evaluate, train)


def _dataset(small_dataset):
    episodes = small_dataset.episodes()
    return Dataset(train=episodes[:12], val=episodes[12:18],
                   test=episodes[18:], vocabulary=small_dataset.vocabulary,
                   edges=small_dataset.edges)


def test_bce_loss_value():
    p = np.array([[0.9], [0.2], [0.6]])
    y = np.array([[1], [0], [0]])
    expected = -np.mean(y * np.log(p) + (1 - y) * np.log(1 - p))
    assert abs(bce_loss(constant(p), y).item() - expected) < 1e-12
    assert bce_loss(constant([[1.0, 0.0]]), [[1, 0]]).item() < 1e-11


def test_bce_loss_contracts():
    with pytest.raises(ContractError):
        bce_loss(constant([[0.5, 0.5]]), [1])
    with pytest.raises(ContractError):
        bce_loss(constant([[0.5]]), [0.5])
    with pytest.raises(DomainError):
        bce_loss(constant([[1.5]]), [1])


def test_eligible_episodes(small_dataset, small_config):
    model = build_model(small_dataset, small_config.replace(
        task='mortality', mortality_window=9))
    episodes = small_dataset.episodes()
    selected = eligible_episodes(model, episodes)
    assert selected == [e for e in episodes if e.length >= 9]


def test_evaluate(small_dataset, small_config):
    model = build_model(small_dataset, small_config)
    episodes = small_dataset.episodes()
    scores, labels, report = evaluate(model, episodes)
    assert scores.shape == labels.shape == (sum(e.length for e in episodes),)
    assert 0.0 <= report.auroc <= 1.0
    with pytest.raises(UndefinedMetricError):
        evaluate(model, [])


def test_evaluate_phenotyping(small_dataset, small_config):
    model = build_model(small_dataset, small_config.replace(task='pheno'))
    scores, labels, report = evaluate(model, small_dataset.episodes())
    assert scores.shape == (len(small_dataset.episodes()), 25)
    assert report.macro_auc is not None
    assert report.auprc is None


def test_zero_epochs_returns_initial_parameters(small_dataset, small_config):
    dataset = _dataset(small_dataset)
    config = small_config.replace(epochs=0)
    model = build_model(dataset, config)
    initial = model.params.snapshot()
    params, history = train(dataset, config, model=model)
    assert history == []
    for path, values in initial.items():
        np.testing.assert_array_equal(params[path].values, values)


def test_training_is_deterministic(small_dataset, small_config):
    dataset = _dataset(small_dataset)
    config = small_config.replace(epochs=2)
    first, history_a = train(dataset, config)
    second, history_b = train(dataset, config)
    for path, param in first.items():
        np.testing.assert_array_equal(param.values, second[path].values)
    assert history_a == history_b
    assert [h['epoch'] for h in history_a] == [1, 2]
    assert all(sorted(h) == sorted(HISTORY_FIELDS) for h in history_a)


def test_training_changes_parameters(small_dataset, small_config):
    dataset = _dataset(small_dataset)
    model = build_model(dataset, small_config)
    initial = model.params.snapshot()
    train(dataset, small_config, model=model)
    assert any(not np.array_equal(model.params[path].values, values)
               for path, values in initial.items())


def test_best_validation_epoch_is_restored(small_dataset, small_config):
    dataset = _dataset(small_dataset)
    config = small_config.replace(epochs=3)
    model = build_model(dataset, config)
    seen = []
    scores = iter([0.5, 0.9, 0.7])

    def fake_evaluate(model, episodes):
        seen.append(model.params.snapshot())
        return None, None, MetricReport(auprc=next(scores), auroc=0.5)

    with mock.patch('kgicu.training.evaluate', side_effect=fake_evaluate):
        params, history = train(dataset, config, model=model)
    assert [h['val_auprc'] for h in history] == [0.5, 0.9, 0.7]
    for path, values in seen[1].items():
        np.testing.assert_array_equal(params[path].values, values)
    assert not np.array_equal(params['head.W2'].values,
                              seen[2]['head.W2'])


def test_equal_validation_scores_keep_the_later_epoch(small_dataset,
                                                     small_config):
    dataset = _dataset(small_dataset)
    config = small_config.replace(epochs=2)
    model = build_model(dataset, config)
    seen = []

    def fake_evaluate(model, episodes):
        seen.append(model.params.snapshot())
        return None, None, MetricReport(auprc=1.0 / 3, auroc=0.5)

    with mock.patch('kgicu.training.evaluate', side_effect=fake_evaluate):
        params, _ = train(dataset, config, model=model)
    for path, values in seen[1].items():
        np.testing.assert_array_equal(params[path].values, values)


def test_batch_loss_weighs_every_step(small_dataset, small_config):
    model = build_model(small_dataset, small_config)
    episodes = small_dataset.episodes()
    short = episodes[0]
    long = next(e for e in episodes if e.length != short.length)
    run = TrainingRun(model, [short, long], [], small_config)
    p = np.concatenate([model.predict(short), model.predict(long)])
    y = np.concatenate([model.labels(short).reshape(-1),
                        model.labels(long).reshape(-1)])
    expected = -np.mean(y * np.log(p) + (1 - y) * np.log(1 - p))
    assert abs(run.batch_loss([short, long]).item() - expected) < 1e-10


def test_undefined_validation_metric_is_skipped(small_dataset, small_config):
    dataset = _dataset(small_dataset)
    error = UndefinedMetricError('AuPRC', 'labels hold no positive')
    with mock.patch('kgicu.training.evaluate', side_effect=error):
        params, history = train(dataset, small_config)
    assert history[0]['val_auprc'] is None
    assert history[0]['loss'] > 0


def test_training_run_states(small_dataset, small_config):
    dataset = _dataset(small_dataset)
    model = build_model(dataset, small_config)
    run = TrainingRun(model, dataset.train, [], small_config)
    assert run.state == 'initialized'
    assert run.machine.can('start')
    assert not run.machine.can('validate')
    run.run()
    assert run.state == 'finished'
    assert [s.name for s in run.machine.history] == ['initialized',
                                                     'training',
                                                     'validating']
    assert run.best_params is None


def test_train_errors(small_dataset, small_config):
    empty = Dataset(val=small_dataset.episodes(),
                    vocabulary=small_dataset.vocabulary)
    with pytest.raises(ConfigurationError):
        train(empty, small_config)
    no_vocabulary = Dataset(train=small_dataset.episodes())
    with pytest.raises(ConfigurationError):
        train(no_vocabulary, small_config)
    short = small_config.replace(task='mortality', mortality_window=50)
    with pytest.raises(ConfigurationError):
        train(_dataset(small_dataset), short)


PLANTED = dict(n_episodes=200, n_vs=3, min_length=16, max_length=20,
               onset_window=16, rule='redundant', noise=0.05, note_rate=0.3,
               vocab_size=10)


def _planted_auroc(model, episodes, latents):
    '''Decompensation AuROC against the noise-free planted labels.'''
    scores = []
    labels = []
    for episode in episodes:
        latent = latents[episode.key]
        scores.append(model.predict(episode))
        labels.extend(int(latent['event'] and t >= latent['onset'])
                      for t in range(episode.length))
    return auroc(np.concatenate(scores), labels)


@pytest.mark.slow
def test_learns_planted_signal(planted):
    from kgicu.config import TrainConfig
    train_scores = []
    held_out = []
    drops = []
    for seed in range(5):
        dataset, latents = planted(seed=seed, **PLANTED)
        config = TrainConfig(task='decompensation', dim=16, hidden_size=16,
                             mortality_window=16, epochs=20,
                             learning_rate=0.005, seed=seed)
        model = build_model(dataset, config)
        _, history = train(dataset, config, model=model)
        if seed < 3:
            drops.append(history[0]['loss'] - history[4]['loss'])
        train_scores.append(_planted_auroc(model, dataset.train, latents))
        held_out.append(_planted_auroc(model, dataset.test, latents))
    assert np.median(train_scores) >= 0.99
    assert np.median(held_out) >= 0.90
    assert np.median(drops) > 0
