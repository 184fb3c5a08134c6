'''Loss, the training loop and evaluation.

A training run is a small state machine::

    initialized --start--> training --validate--> validating
                              ^                       |
                              +-------next_epoch------+
    (any state) --finish--> finished

Each validation records one history entry; the parameters of the best
validation epoch are restored when the run finishes.
'''
import logging

import numpy as np

from .autodiff import (OptimizerState, Tape, add, backward, bce,
                       optimizer_step, scale)
from .config import ConfigValidator
from .errors import ConfigurationError, ContractError, DomainError, \
    UndefinedMetricError
from .lifecycle import Event, State, StateMachine
from .metrics import compute_metrics, compute_multilabel_metrics
from .model import ConceptIndex, KnowledgeModel, build_kg_for_dataset
from .sequence import TaskKind

logger = logging.getLogger(__name__)

HISTORY_FIELDS = ('epoch', 'loss', 'val_auprc', 'val_auroc', 'val_macro_auc',
                  'val_micro_auc')


def bce_loss(probabilities, labels):
    '''Mean binary cross-entropy, probabilities clamped to [1e-12, 1 - 1e-12].

    For multilabel outputs the mean runs over the labels of every sample and
    then over samples, which for equally sized rows is the overall mean.

    :param probabilities: Tensor of probabilities
    :type probabilities: :class:`~kgicu.autodiff.Tensor`
    :param labels: 0/1 labels of the same size
    :rtype: :class:`~kgicu.autodiff.Tensor`
    '''
    labels = np.asarray(labels, dtype=np.float64)
    if labels.size != probabilities.values.size:
        raise ContractError('{0} probabilities but {1} labels'.format(
            probabilities.values.size, labels.size))
    if not np.all((labels == 0) | (labels == 1)):
        raise ContractError('Labels must be 0 or 1')
    if np.any((probabilities.values < 0) | (probabilities.values > 1)):
        raise DomainError('Probabilities must lie in [0, 1]')
    return bce(probabilities, labels)


def eligible_episodes(model, episodes):
    '''Episodes with a label for the model's task (and long enough).'''
    selected = []
    for episode in episodes:
        if model.task.value not in episode.labels:
            continue
        if (model.task is TaskKind.MORTALITY and
                episode.length < model.config.mortality_window):
            continue
        selected.append(episode)
    skipped = len(episodes) - len(selected)
    if skipped:
        logger.debug('%d episodes not eligible for %s', skipped,
                     model.task.value)
    return selected


def build_model(dataset, config):
    '''Fresh :class:`~kgicu.model.KnowledgeModel` for `dataset`.

    With `use_kg` the global knowledge graph is built from the concepts of
    every loaded episode.
    '''
    ConfigValidator(config).validate(dataset.n_vs)
    kg = None
    vocabulary = None
    if config.use_kg:
        if dataset.vocabulary is None:
            raise ConfigurationError('use_kg needs a vocabulary in the '
                                     'dataset directory')
        vocabulary = dataset.vocabulary
        index = ConceptIndex(vocabulary, config.concept_threshold,
                             config.carry_concepts)
        kg = build_kg_for_dataset(dataset.episodes(), vocabulary,
                                  dataset.edges, config, index)
    model = KnowledgeModel(config, dataset.n_vs, kg, vocabulary)
    if config.use_kg:
        model.concepts = index
    return model


def evaluate(model, episodes):
    '''Score `episodes` and compute the task's metrics.

    :returns: ``(scores, labels, report)``; scores and labels are flat for
        the binary tasks and ``n x 25`` for phenotyping
    :raises: :class:`~kgicu.errors.UndefinedMetricError` when the labels hold
        a single class
    '''
    episodes = eligible_episodes(model, episodes)
    if not episodes:
        raise UndefinedMetricError('AuROC', 'no eligible episodes')
    scores = [model.predict(episode) for episode in episodes]
    labels = [model.labels(episode).reshape(-1) for episode in episodes]
    if model.task is TaskKind.PHENOTYPING:
        scores = np.vstack(scores)
        labels = np.vstack(labels)
        return scores, labels, compute_multilabel_metrics(scores, labels)
    scores = np.concatenate(scores)
    labels = np.concatenate(labels).astype(np.int64)
    return scores, labels, compute_metrics(scores, labels)


class TrainingRun(object):
    '''One call of :func:`train`: epochs, validation and model selection.'''
    def __init__(self, model, train_episodes, val_episodes, config):
        self.model = model
        self.train_episodes = train_episodes
        self.val_episodes = val_episodes
        self.config = config
        self.history = []
        self.best_score = None
        self.best_epoch = None
        self.best_params = None
        self.rng = np.random.RandomState(config.seed)
        self.tape = Tape()
        self.optimizer = OptimizerState(model.params, config.learning_rate)
        self.machine = self._build_machine()

    def _build_machine(self):
        initialized = State('initialized')
        training = State('training')
        validating = State('validating')
        finished = State('finished')
        validating.handlers = {'enter': self._on_validate}
        finished.handlers = {'enter': self._on_finish}
        machine = StateMachine('training run')
        machine.add_state(initialized, initial=True)
        machine.add_states(training, validating, finished)
        machine.add_transition(initialized, training, events=['start'])
        machine.add_transition(training, validating, events=['validate'])
        machine.add_transition(validating, training, events=['next_epoch'])
        for state in (initialized, training, validating):
            machine.add_transition(state, finished, events=['finish'])
        machine.initialize()
        return machine

    @property
    def state(self):
        return self.machine.state.name

    def run(self):
        self.machine.dispatch(Event('start'))
        for epoch in range(1, self.config.epochs + 1):
            if epoch > 1:
                self.machine.dispatch(Event('next_epoch'))
            loss = self.train_epoch()
            self.machine.dispatch(Event('validate', epoch=epoch, loss=loss))
        self.machine.dispatch(Event('finish'))
        return self.model.params, self.history

    def batches(self):
        order = self.rng.permutation(len(self.train_episodes))
        size = self.config.batch_size
        for start in range(0, len(order), size):
            yield [self.train_episodes[i] for i in order[start:start + size]]

    def batch_loss(self, batch):
        '''Mean binary cross-entropy over every label of the batch.

        Episodes weigh by their number of labels, so a long decompensation
        stay counts as many steps, not as one episode.
        '''
        total = None
        count = 0
        for episode in batch:
            probabilities, _ = self.model.forward(episode)
            labels = self.model.labels(episode)
            loss = scale(bce_loss(probabilities, labels), float(labels.size))
            total = loss if total is None else add(total, loss)
            count += labels.size
        return scale(total, 1.0 / count)

    def train_epoch(self):
        losses = []
        for batch in self.batches():
            with self.tape:
                loss = self.batch_loss(batch)
                backward(loss, self.model.params)
            optimizer_step(self.model.params, self.optimizer)
            self.tape.reset()
            losses.append(loss.item())
            logger.debug('batch of %d: loss %.5f', len(batch), losses[-1])
        return float(np.mean(losses))

    def _on_validate(self, state, event):
        epoch = event.cargo['source_event'].cargo['epoch']
        loss = event.cargo['source_event'].cargo['loss']
        entry = dict((name, None) for name in HISTORY_FIELDS)
        entry.update(epoch=epoch, loss=loss)
        if self.val_episodes:
            try:
                _, _, report = evaluate(self.model, self.val_episodes)
            except UndefinedMetricError as e:
                logger.warning('Epoch %d: validation skipped, %s', epoch, e)
            else:
                entry.update(val_auprc=report.auprc, val_auroc=report.auroc,
                             val_macro_auc=report.macro_auc,
                             val_micro_auc=report.micro_auc)
                if (self.best_score is None or
                        report.primary >= self.best_score):
                    self.best_score = report.primary
                    self.best_epoch = epoch
                    self.best_params = self.model.params.snapshot()
        self.history.append(entry)
        logger.info('Epoch %d/%d: loss %.5f, validation %s', epoch,
                    self.config.epochs, loss,
                    _format_metric(entry['val_auprc']
                                   if entry['val_auprc'] is not None
                                   else entry['val_macro_auc']))

    def _on_finish(self, state, event):
        if self.best_params is not None:
            self.model.params.restore(self.best_params)
            logger.info('Restored parameters of epoch %d (validation %.4f)',
                        self.best_epoch, self.best_score)


def _format_metric(value):
    return 'n/a' if value is None else '{0:.4f}'.format(value)


def train(dataset, config, model=None):
    '''Train a model on the train split of `dataset`.

    Mini-batches are drawn by a seeded shuffle and the parameters are updated
    with the adaptive-moment optimizer; identical data, config and seed give
    identical results. After every epoch the model is scored on the
    validation split, and the best validation epoch's parameters are
    returned; on equal scores the later epoch wins.

    :param dataset: Loaded dataset
    :type dataset: :class:`~kgicu.data.Dataset`
    :param config: Training configuration
    :type config: :class:`~kgicu.config.TrainConfig`
    :param model: Model to train; :func:`build_model` when `None`
    :returns: ``(params, history)``; history has one dict per epoch with the
        keys in :data:`HISTORY_FIELDS`
    :raises: :class:`~kgicu.errors.ConfigurationError` for an empty training
        split
    '''
    ConfigValidator(config).validate(dataset.n_vs)
    if not dataset.train:
        raise ConfigurationError('The training split is empty')
    if model is None:
        model = build_model(dataset, config)
    train_episodes = eligible_episodes(model, dataset.train)
    if not train_episodes:
        raise ConfigurationError('No training episode is eligible for {0}'
                                 .format(model.task.value))
    logger.info('Training %r on %d episodes for %d epochs', model,
                len(train_episodes), config.epochs)
    run = TrainingRun(model, train_episodes,
                      eligible_episodes(model, dataset.val), config)
    return run.run()
