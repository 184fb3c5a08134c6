'''Ranking metrics: AuROC, AuPRC (average precision), macro/micro AUC.'''
import logging

import numpy as np

from .errors import ContractError, UndefinedMetricError

logger = logging.getLogger(__name__)


class MetricReport(object):
    '''Metrics of one evaluation. Fields that do not apply are `None`.'''
    def __init__(self, auprc=None, auroc=None, macro_auc=None, micro_auc=None,
                 positives=0, negatives=0):
        self.auprc = auprc
        self.auroc = auroc
        self.macro_auc = macro_auc
        self.micro_auc = micro_auc
        self.positives = positives
        self.negatives = negatives

    def __repr__(self):
        return ('<MetricReport auprc={0} auroc={1} macro_auc={2} '
                'micro_auc={3} pos={4} neg={5}>'.format(
                    self.auprc, self.auroc, self.macro_auc, self.micro_auc,
                    self.positives, self.negatives))

    def as_dict(self):
        return {
            'auprc': self.auprc,
            'auroc': self.auroc,
            'macro_auc': self.macro_auc,
            'micro_auc': self.micro_auc,
            'positives': self.positives,
            'negatives': self.negatives,
        }

    @property
    def primary(self):
        '''Model selection metric: AuPRC, or macro-AUC for multilabel.'''
        return self.auprc if self.auprc is not None else self.macro_auc


def _check(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise ContractError('{0} scores but {1} labels'.format(
            scores.size, labels.size))
    if not np.all((labels == 0) | (labels == 1)):
        raise ContractError('Labels must be 0 or 1')
    return scores, labels.astype(np.int64)


def average_ranks(values):
    '''1-based ranks; tied values share the average of their ranks.'''
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind='mergesort')
    ordered = values[order]
    ranks = np.empty(values.size)
    start = 0
    while start < values.size:
        stop = start
        while stop + 1 < values.size and ordered[stop + 1] == ordered[start]:
            stop += 1
        ranks[order[start:stop + 1]] = (start + stop) / 2.0 + 1.0
        start = stop + 1
    return ranks


def auroc(scores, labels):
    '''Area under the ROC curve via the rank-sum statistic.'''
    scores, labels = _check(scores, labels)
    positives = int(labels.sum())
    negatives = labels.size - positives
    if positives == 0 or negatives == 0:
        raise UndefinedMetricError('AuROC', 'labels hold a single class')
    ranks = average_ranks(scores)
    rank_sum = ranks[labels == 1].sum()
    return ((rank_sum - positives * (positives + 1) / 2.0)
            / (positives * negatives))


def average_precision(scores, labels):
    '''Area under the precision-recall step curve.

    Sum over thresholds of the recall increment times the precision at that
    threshold; tied scores form one threshold.
    '''
    scores, labels = _check(scores, labels)
    positives = int(labels.sum())
    if positives == 0:
        raise UndefinedMetricError('AuPRC', 'labels hold no positive')
    order = np.argsort(-scores, kind='mergesort')
    ordered = scores[order]
    hits = np.cumsum(labels[order])
    last_of_threshold = np.r_[np.where(np.diff(ordered) != 0)[0],
                              ordered.size - 1]
    tp = hits[last_of_threshold].astype(np.float64)
    precision = tp / (last_of_threshold + 1)
    recall = tp / positives
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def compute_metrics(scores, labels):
    '''AuPRC and AuROC of binary scores.

    :raises: :class:`~kgicu.errors.UndefinedMetricError` when the labels hold
        a single class
    :rtype: :class:`MetricReport`
    '''
    scores, labels = _check(scores, labels)
    positives = int(labels.sum())
    return MetricReport(auprc=average_precision(scores, labels),
                        auroc=auroc(scores, labels),
                        positives=positives,
                        negatives=labels.size - positives)


def compute_multilabel_metrics(scores, labels):
    '''Macro-AUC (mean per-label AuROC) and micro-AUC (pooled AuROC).

    Labels with a single class in `labels` are left out of the macro mean.

    :param scores: ``n x L`` scores
    :param labels: ``n x L`` 0/1 labels
    :rtype: :class:`MetricReport`
    '''
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 2:
        raise ContractError('Multilabel scores and labels must be matching '
                            'n x L arrays, got {0} and {1}'.format(
                                scores.shape, labels.shape))
    per_label = []
    for j in range(scores.shape[1]):
        try:
            per_label.append(auroc(scores[:, j], labels[:, j]))
        except UndefinedMetricError:
            logger.debug('label %d has a single class, left out of macro-AUC',
                         j)
    if not per_label:
        raise UndefinedMetricError('macro-AUC', 'every label holds a single '
                                                'class')
    positives = int(labels.sum())
    return MetricReport(macro_auc=float(np.mean(per_label)),
                        micro_auc=auroc(scores.reshape(-1),
                                        labels.reshape(-1)),
                        positives=positives,
                        negatives=labels.size - positives)
