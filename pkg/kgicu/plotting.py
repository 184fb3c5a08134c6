'''Render result files as figures (file in, file out).

The input kind is read from the file:

* metric CSV with numeric `rung_or_ratio` - metric versus masking ratio,
* metric CSV with rung names - bar chart of the rungs,
* ``.jsonl`` attention records - one heatmap per layer of a timestep,
* ranking ``.json`` - horizontal bars of the top concepts,
* trace CSV (header starting with ``t``) - probability per step.

The output format follows the extension of the output path (PNG or SVG).
'''
import codecs
import csv
import json
import logging

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .encoder import read_attention_records  # noqa: E402
from .errors import InputError  # noqa: E402
from .experiments import METRIC_COLUMNS, read_metric_rows  # noqa: E402

logger = logging.getLogger(__name__)

PLOTTED_METRICS = ('auroc', 'auprc', 'macro_auc', 'micro_auc')


def _is_number(text):
    try:
        float(text)
    except (TypeError, ValueError):
        return False
    return True


def _summary(rows, metric):
    keys = []
    means = {}
    stds = {}
    for row in rows:
        key = row['rung_or_ratio']
        if key not in keys:
            keys.append(key)
        if row['seed'] == 'mean':
            means[key] = row[metric]
        elif row['seed'] == 'std':
            stds[key] = row[metric]
    if not means:
        for key in keys:
            values = [r[metric] for r in rows
                      if r['rung_or_ratio'] == key and r[metric] is not None]
            means[key] = float(np.mean(values)) if values else None
            stds[key] = float(np.std(values)) if values else None
    return keys, means, stds


def plot_metrics(rows, out_path):
    metrics = [m for m in PLOTTED_METRICS
               if any(r[m] is not None for r in rows)]
    if not metrics:
        raise InputError('No metric values to plot')
    numeric = all(_is_number(r['rung_or_ratio']) for r in rows)
    figure, axes = plt.subplots(figsize=(7, 4))
    for metric in metrics:
        keys, means, stds = _summary(rows, metric)
        keys = [k for k in keys if means.get(k) is not None]
        y = np.array([means[k] for k in keys])
        err = np.array([stds.get(k) or 0.0 for k in keys])
        if numeric:
            x = np.array([float(k) for k in keys])
            axes.errorbar(x, y, yerr=err, marker='o', capsize=3, label=metric)
            axes.set_xlabel('missing ratio')
        else:
            offset = 0.8 * metrics.index(metric) / len(metrics)
            x = np.arange(len(keys)) + offset
            axes.bar(x, y, width=0.8 / len(metrics), yerr=err, capsize=3,
                     label=metric)
            axes.set_xticks(np.arange(len(keys)) + 0.4 - 0.4 / len(metrics))
            axes.set_xticklabels(keys, rotation=30, ha='right')
    axes.set_ylabel('score')
    axes.set_ylim(0.0, 1.05)
    axes.set_title(rows[0]['task'])
    axes.legend()
    _save(figure, out_path)


def plot_heatmaps(records, out_path, timestep=None):
    '''Attention heatmaps of every layer at `timestep`.

    Without a timestep the one with the largest graph is shown.
    '''
    if not records:
        raise InputError('No attention records to plot')
    if timestep is None:
        timestep = max(records, key=lambda r: (len(r.node_roles),
                                               -r.timestep)).timestep
    selected = sorted((r for r in records if r.timestep == timestep),
                      key=lambda r: r.layer)
    if not selected:
        raise InputError('No attention records at step {0}'.format(timestep))
    figure, axes = plt.subplots(1, len(selected),
                                figsize=(5 * len(selected), 4.5),
                                squeeze=False)
    for ax, record in zip(axes[0], selected):
        image = ax.imshow(record.alpha, cmap='viridis', vmin=0.0,
                          aspect='auto')
        ax.set_title('step {0}, layer {1}'.format(record.timestep,
                                                  record.layer + 1))
        ticks = np.arange(len(record.node_roles))
        ax.set_xticks(ticks)
        ax.set_yticks(ticks)
        ax.set_xticklabels(record.node_roles, rotation=90, fontsize=6)
        ax.set_yticklabels(record.node_roles, fontsize=6)
        figure.colorbar(image, ax=ax)
    _save(figure, out_path)


def plot_ranking(ranking, out_path):
    concepts = ranking['top_concepts']
    figure, axes = plt.subplots(figsize=(7, 0.4 * max(len(concepts), 1) + 1))
    labels = ['{0} ({1})'.format(c['term'] or c['concept_id'],
                                 c['concept_id']) for c in concepts]
    axes.barh(np.arange(len(concepts)), [c['score'] for c in concepts])
    axes.set_yticks(np.arange(len(concepts)))
    axes.set_yticklabels(labels)
    axes.invert_yaxis()
    axes.set_xlabel('attention score')
    axes.set_title(ranking.get('episode', ''))
    _save(figure, out_path)


def plot_trace(header, rows, out_path):
    t = np.array([int(row[0]) for row in rows])
    figure, axes = plt.subplots(figsize=(8, 3.5))
    label_column = header.index('label')
    for column in range(1, label_column):
        axes.plot(t, [float(row[column]) for row in rows],
                  label=header[column])
    labels = [(int(row[0]), float(row[label_column])) for row in rows
              if row[label_column] != '']
    if labels:
        axes.step([x for x, _ in labels], [y for _, y in labels],
                  where='post', linestyle='--', color='black', label='label')
    axes.set_xlabel('hour')
    axes.set_ylabel('probability')
    axes.set_ylim(-0.05, 1.05)
    if label_column <= 3:
        axes.legend()
    _save(figure, out_path)


def _save(figure, out_path):
    figure.tight_layout()
    figure.savefig(out_path)
    plt.close(figure)
    logger.info('Wrote %s', out_path)


def plot_file(in_path, out_path):
    '''Render `in_path` into `out_path`, picking the figure from the input.'''
    if in_path.endswith('.jsonl'):
        return plot_heatmaps(read_attention_records(in_path), out_path)
    if in_path.endswith('.json'):
        with codecs.open(in_path, 'r', 'utf-8') as f:
            return plot_ranking(json.load(f), out_path)
    with codecs.open(in_path, 'r', 'utf-8') as f:
        reader = csv.reader(f)
        header = next(reader, None)
        rows = list(reader)
    if header is None:
        raise InputError('{0} is empty'.format(in_path))
    if tuple(header[:len(METRIC_COLUMNS)]) == METRIC_COLUMNS:
        return plot_metrics(read_metric_rows(in_path), out_path)
    if header[0] == 't' and 'label' in header:
        return plot_trace(header, rows, out_path)
    raise InputError('Unrecognized result file {0}'.format(in_path))
