'''Robustness sweep, ablation ladder and attention reports.

Results are written as CSV with the header
``task, rung_or_ratio, seed, auprc, auroc, macro_auc, micro_auc``. Sweeps and
ablations add summary rows whose `seed` column is ``mean`` or ``std``
(population standard deviation over the successful seeds).
'''
import codecs
import csv
import json
import logging
from collections import OrderedDict

import numpy as np

from .errors import CapabilityError, ContractError, KgIcuError
from .training import build_model, evaluate, train

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ('task', 'rung_or_ratio', 'seed', 'auprc', 'auroc',
                  'macro_auc', 'micro_auc')
# failed runs keep their error text in a trailing column
METRIC_HEADER = METRIC_COLUMNS + ('error',)
METRICS = METRIC_COLUMNS[3:]

DEFAULT_SEEDS = (0, 1, 2, 3, 4)
DEFAULT_RATIOS = tuple(round(0.1 * i, 1) for i in range(10))
TOP_K = 10

# (rung name, ablation flags); vitals only, then vitals and text, then all
RUNGS = (
    ('vitals', dict(use_ft=False, use_gnn=False, use_text=False,
                    use_kg=False)),
    ('vitals+ft', dict(use_ft=True, use_gnn=False, use_text=False,
                       use_kg=False)),
    ('vitals+ft+gnn', dict(use_ft=True, use_gnn=True, use_text=False,
                           use_kg=False)),
    ('vitals+text', dict(use_ft=False, use_gnn=False, use_text=True,
                         use_kg=False)),
    ('vitals+text+ft', dict(use_ft=True, use_gnn=False, use_text=True,
                            use_kg=False)),
    ('vitals+text+ft+gnn', dict(use_ft=True, use_gnn=True, use_text=True,
                                use_kg=False)),
    ('full', dict(use_ft=True, use_gnn=True, use_text=True, use_kg=True)),
)
RUNG_NAMES = tuple(name for name, _ in RUNGS)


def metric_row(task, rung_or_ratio, seed, report=None, error=None):
    row = OrderedDict((name, None) for name in METRIC_HEADER)
    row.update(task=task, rung_or_ratio=rung_or_ratio, seed=seed)
    if report is not None:
        for name in METRICS:
            row[name] = getattr(report, name)
    row['error'] = error
    return row


def mask_vitals(episodes, ratio, seed):
    '''Copy of `episodes` with vital entries randomly marked missing.

    Every (timestep, vital) entry is masked independently with probability
    `ratio`; entries already missing stay missing. Notes are shared with the
    input, which is left untouched.

    :param episodes: Episodes to mask
    :param ratio: Masking probability in [0, 1]
    :param seed: Seed of the generator
    :rtype: list of :class:`~kgicu.data.Episode`
    '''
    if not 0.0 <= ratio <= 1.0:
        raise ContractError('Masking ratio must be in [0, 1], got {0}'
                            .format(ratio))
    rng = np.random.RandomState(seed)
    masked = []
    for episode in episodes:
        drawn = rng.uniform(size=episode.vitals_missing.shape) < ratio
        masked.append(episode.replace(
            vitals_missing=episode.vitals_missing | drawn))
    return masked


def summarize(rows):
    '''Mean and population std rows per `rung_or_ratio`, in first-seen order.
    '''
    groups = OrderedDict()
    for row in rows:
        groups.setdefault((row['task'], row['rung_or_ratio']), []).append(row)
    summary = []
    for (task, key), members in groups.items():
        mean = metric_row(task, key, 'mean')
        std = metric_row(task, key, 'std')
        for name in METRICS:
            values = [r[name] for r in members if r[name] is not None]
            if values:
                mean[name] = float(np.mean(values))
                std[name] = float(np.std(values))
        summary.extend([mean, std])
    return summary


class SweepResult(object):
    '''Per-(key, seed) rows and their summary rows.'''
    def __init__(self, rows):
        self.rows = list(rows)
        self.summary = summarize(self.rows)

    def __repr__(self):
        return '<SweepResult rows={0} failed={1}>'.format(
            len(self.rows), len(self.failures))

    @property
    def failures(self):
        return [row for row in self.rows if row['error']]

    def mean(self, key, metric):
        for row in self.summary:
            if row['rung_or_ratio'] == key and row['seed'] == 'mean':
                return row[metric]
        raise KeyError(key)

    def save(self, path):
        write_metric_rows(path, self.rows + self.summary)


def missing_sweep(model, episodes, ratios=DEFAULT_RATIOS, seeds=DEFAULT_SEEDS):
    '''Evaluate a trained model on increasingly masked vitals.

    A metric error of one (ratio, seed) pair is recorded in that row's
    `error` field and the sweep goes on.

    :param model: Trained model
    :type model: :class:`~kgicu.model.KnowledgeModel`
    :param episodes: Test episodes
    :param ratios: Masking ratios
    :param seeds: Masking seeds
    :rtype: :class:`SweepResult`
    '''
    rows = []
    for ratio in ratios:
        for seed in seeds:
            try:
                _, _, report = evaluate(model,
                                        mask_vitals(episodes, ratio, seed))
            except KgIcuError as e:
                logger.warning('ratio %s seed %s failed: %s', ratio, seed, e)
                rows.append(metric_row(model.task.value, ratio, seed,
                                       error=str(e)))
                continue
            rows.append(metric_row(model.task.value, ratio, seed, report))
        logger.info('Masking ratio %s done over %d seeds', ratio, len(seeds))
    return SweepResult(rows)


def ablation_suite(dataset, base_config, seeds=DEFAULT_SEEDS, rungs=RUNGS):
    '''Train and test every rung of the ablation ladder for every seed.

    Each rung takes `base_config` with its ablation flags and the seed
    replaced. A failing (rung, seed) run is recorded and the suite goes on.

    :param dataset: Loaded dataset with text and a vocabulary
    :type dataset: :class:`~kgicu.data.Dataset`
    :param base_config: Shared hyperparameters
    :type base_config: :class:`~kgicu.config.TrainConfig`
    :rtype: :class:`SweepResult`
    '''
    task = base_config.task_kind.value
    rows = []
    for name, flags in rungs:
        for seed in seeds:
            config = base_config.replace(seed=seed, **flags)
            try:
                model = build_model(dataset, config)
                train(dataset, config, model=model)
                _, _, report = evaluate(model, dataset.test)
            except KgIcuError as e:
                logger.warning('rung %s seed %s failed: %s', name, seed, e)
                rows.append(metric_row(task, name, seed, error=str(e)))
                continue
            rows.append(metric_row(task, name, seed, report))
        logger.info('Rung %s done over %d seeds', name, len(seeds))
    return SweepResult(rows)


class AttentionSummary(object):
    '''Concept attention ranking, raw attention records and the trace.

    .. attribute:: scores

        Concept id -> mean attention mass over the steps it is present.

    .. attribute:: ranking

        ``(concept_id, term, score)`` for the top concepts, highest first.

    .. attribute:: trace

        One dict per step: `t`, `probabilities` and `label` (`None` when the
        task has no per-step label).
    '''
    def __init__(self, episode_key, scores, ranking, records, trace):
        self.episode_key = episode_key
        self.scores = scores
        self.ranking = ranking
        self.records = records
        self.trace = trace

    def __repr__(self):
        return '<AttentionSummary {0} concepts={1} steps={2}>'.format(
            self.episode_key, len(self.scores), len(self.trace))

    def rank_of(self, concept_id):
        '''1-based position in the full ranking, `None` if never present.'''
        ordered = _rank(self.scores)
        for position, (cid, _) in enumerate(ordered, 1):
            if cid == concept_id:
                return position
        return None

    def ranking_json(self):
        return {
            'episode': self.episode_key,
            'top_concepts': [{'concept_id': cid, 'term': term,
                              'score': score}
                             for cid, term, score in self.ranking],
        }


def _rank(scores):
    return sorted(scores.items(), key=lambda item: (-item[1], item[0]))


def concept_attention(records):
    '''Mean attention mass per KG concept.

    The mass of a node at a step is the column sum of the attention matrix
    (the weight all nodes give it), averaged over layers. A concept's score
    is the mean of its mass over the steps where its node exists.
    '''
    per_step = OrderedDict()
    for record in records:
        per_step.setdefault(record.timestep, []).append(record)
    totals = {}
    counts = {}
    for layers in per_step.values():
        roles = layers[0].node_roles
        mass = np.mean([record.alpha.sum(axis=0) for record in layers],
                       axis=0)
        for i, role in enumerate(roles):
            if role.startswith('kg:'):
                concept_id = role[3:]
                totals[concept_id] = totals.get(concept_id, 0.0) + mass[i]
                counts[concept_id] = counts.get(concept_id, 0) + 1
    return dict((c, float(totals[c] / counts[c])) for c in totals)


def _step_labels(model, episode):
    labels = episode.labels.get(model.task.value)
    if labels is None:
        return [None] * episode.length
    if model.task.value == 'decompensation':
        return list(labels)
    if model.task.value == 'mortality':
        return [labels] * episode.length
    return [None] * episode.length


def attention_report(model, episode, top_k=TOP_K):
    '''Explain one episode through the attention the model pays to concepts.

    :param model: Model built with ``layer_kind = attention``
    :type model: :class:`~kgicu.model.KnowledgeModel`
    :param episode: Episode to explain
    :param top_k: Length of the ranking
    :rtype: :class:`AttentionSummary`
    :raises: :class:`~kgicu.errors.CapabilityError` for models without
        attention layers
    '''
    if model.config.layer_kind != 'attention' or model.encoder.depth == 0:
        raise CapabilityError('Attention reports need attention layers; '
                              'retrain with "layer_kind = attention" and '
                              'use_gnn enabled')
    probabilities, records = model.trace(episode)
    scores = concept_attention(records)
    ranking = []
    for concept_id, score in _rank(scores)[:top_k]:
        term = (model.vocabulary.term_of(concept_id)
                if model.vocabulary is not None and
                concept_id in model.vocabulary else '')
        ranking.append((concept_id, term, score))
    trace = []
    for t, label in enumerate(_step_labels(model, episode)):
        trace.append({'t': t, 'probabilities': probabilities[t].tolist(),
                      'label': label})
    logger.info('Explained %s: %d concepts attended over %d steps',
                episode.key, len(scores), episode.length)
    return AttentionSummary(episode.key, scores, ranking, records, trace)


def write_metric_rows(path, rows):
    with codecs.open(path, 'w', 'utf-8') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(METRIC_HEADER)
        for row in rows:
            writer.writerow(['' if row[name] is None else row[name]
                             for name in METRIC_HEADER])


def read_metric_rows(path):
    with codecs.open(path, 'r', 'utf-8') as f:
        rows = []
        for row in csv.DictReader(f):
            for name in METRICS:
                row[name] = float(row[name]) if row[name] else None
            row['error'] = row.get('error') or None
            rows.append(row)
        return rows


def write_trace(path, trace):
    with codecs.open(path, 'w', 'utf-8') as f:
        writer = csv.writer(f, lineterminator='\n')
        width = len(trace[0]['probabilities']) if trace else 1
        names = (['probability'] if width == 1 else
                 ['probability_{0}'.format(j) for j in range(width)])
        writer.writerow(['t'] + names + ['label'])
        for step in trace:
            writer.writerow([step['t']] + step['probabilities'] +
                            ['' if step['label'] is None else step['label']])


def write_ranking(path, summary):
    with codecs.open(path, 'w', 'utf-8') as f:
        json.dump(summary.ranking_json(), f, indent=2, sort_keys=True)
