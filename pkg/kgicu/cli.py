'''Command line interface: ``kgicu <verb> [options]``.

Exit status is 0 on success, 2 when input data or configuration fail
validation and 1 for any other error.
'''
import argparse
import logging
import os
import sys

from .config import TrainConfig
from .data import load_dataset, preprocess_notes, read_episodes, \
    write_dataset, EPISODES_FILE
from .encoder import write_attention_records
from .errors import ConfigurationError, DataFormatError, InputError, \
    KgIcuError, UndefinedMetricError, ValidationError
from .experiments import (DEFAULT_SEEDS, ablation_suite,
                          attention_report, metric_row, missing_sweep,
                          write_metric_rows, write_ranking, write_trace)
from .knowledge import Vocabulary, build_global_kg, load_edges
from .model import ConceptIndex, embedding_provider, load_checkpoint
from .plotting import plot_file
from .synthetic import SyntheticSpec, generate_synthetic
from .training import HISTORY_FIELDS, build_model, evaluate, train

logger = logging.getLogger(__name__)

VALIDATION_ERRORS = (ValidationError, ConfigurationError, DataFormatError,
                     InputError)

TASK_CHOICES = ('mortality', 'decomp', 'decompensation', 'pheno',
                'phenotyping')

HEATMAPS_FILE = 'heatmaps.jsonl'
RANKING_FILE = 'ranking.json'
TRACE_FILE = 'trace.csv'


def parse_ratios(text):
    '''Comma separated ratios; ``a,b,...,c`` continues the step ``b - a``.'''
    parts = [p.strip() for p in text.split(',') if p.strip()]
    if '...' not in parts:
        return [float(p) for p in parts]
    at = parts.index('...')
    if at < 2 or at != len(parts) - 2:
        raise ConfigurationError('Ratios "{0}": "..." needs two values '
                                 'before and one after'.format(text))
    head = [float(p) for p in parts[:at]]
    stop = float(parts[-1])
    step = head[-1] - head[-2]
    if step <= 0:
        raise ConfigurationError('Ratios "{0}" must increase'.format(text))
    count = int(round((stop - head[0]) / step))
    return [round(head[0] + i * step, 10) for i in range(count + 1)]


def parse_seeds(text):
    '''A count (``5`` means seeds 0-4) or a comma separated seed list.'''
    if ',' in text:
        return [int(s) for s in text.split(',') if s.strip()]
    return list(range(int(text)))


def _load_config(args):
    overrides = {}
    if getattr(args, 'task', None):
        overrides['task'] = args.task
    if args.config:
        return TrainConfig.load(args.config, **overrides)
    return TrainConfig(**overrides)


def cmd_gen_synth(args):
    spec = SyntheticSpec.load(args.spec) if args.spec else SyntheticSpec()
    if args.seed is not None:
        spec = spec.replace(seed=args.seed)
    episodes, vocabulary, edges = generate_synthetic(spec)
    write_dataset(args.out, episodes, vocabulary, edges)


def cmd_build_kg(args):
    config = _load_config(args)
    vocabulary = Vocabulary.load(args.vocab)
    edges = load_edges(args.edges)
    episodes = [preprocess_notes(e) for e in
                read_episodes(os.path.join(args.episodes, EPISODES_FILE))]
    index = ConceptIndex(vocabulary, config.concept_threshold,
                         config.carry_concepts)
    graph = build_global_kg(index.concept_sets(episodes), edges,
                            embedding_provider(config))
    graph.save(args.out)
    logger.info('Wrote %r to %s', graph, args.out)


def cmd_train(args):
    config = _load_config(args)
    dataset = load_dataset(args.data, config.task_kind, config.split_seed,
                           config.mortality_window)
    model = build_model(dataset, config)
    _, history = train(dataset, config, model=model)
    model.save(args.out)
    _write_history(args.out + '.history.csv', history)
    try:
        _, _, report = evaluate(model, dataset.test)
    except UndefinedMetricError as e:
        logger.warning('No test metrics: %s', e)
        row = metric_row(model.task.value, 'test', config.seed, error=str(e))
    else:
        logger.info('Test metrics: %r', report)
        row = metric_row(model.task.value, 'test', config.seed, report)
    write_metric_rows(args.out + '.metrics.csv', [row])


def _write_history(path, history):
    rows = [[entry[name] for name in HISTORY_FIELDS] for entry in history]
    with open(path, 'w') as f:
        f.write(','.join(HISTORY_FIELDS) + '\n')
        for row in rows:
            f.write(','.join('' if v is None else repr(v) for v in row) + '\n')


def _load_for_checkpoint(args, model):
    return load_dataset(args.data, model.task, model.config.split_seed,
                        model.config.mortality_window)


def cmd_evaluate(args):
    model = load_checkpoint(args.ckpt)
    dataset = _load_for_checkpoint(args, model)
    _, _, report = evaluate(model, dataset.split(args.split))
    row = metric_row(model.task.value, args.split, model.config.seed, report)
    print(', '.join('{0}={1}'.format(k, row[k]) for k in
                    ('auprc', 'auroc', 'macro_auc', 'micro_auc')))
    if args.out:
        write_metric_rows(args.out, [row])


def cmd_mask_sweep(args):
    model = load_checkpoint(args.ckpt)
    dataset = _load_for_checkpoint(args, model)
    result = missing_sweep(model, dataset.split(args.split),
                           parse_ratios(args.ratios), parse_seeds(args.seeds))
    _report(result, args.out)


def cmd_ablate(args):
    config = _load_config(args)
    dataset = load_dataset(args.data, config.task_kind, config.split_seed,
                           config.mortality_window)
    result = ablation_suite(dataset, config, parse_seeds(args.seeds))
    _report(result, args.out)


def _report(result, out):
    for row in result.summary:
        if row['seed'] == 'mean':
            logger.info('%s: auprc=%s auroc=%s', row['rung_or_ratio'],
                        row['auprc'], row['auroc'])
    if out:
        result.save(out)
    if result.failures:
        logger.warning('%d runs failed', len(result.failures))
    return result


def cmd_explain(args):
    model = load_checkpoint(args.ckpt)
    dataset = load_dataset(args.data, None, model.config.split_seed,
                           model.config.mortality_window)
    summary = attention_report(model, dataset.find(args.episode))
    if not os.path.isdir(args.out):
        os.makedirs(args.out)
    write_attention_records(os.path.join(args.out, HEATMAPS_FILE),
                            summary.records)
    write_ranking(os.path.join(args.out, RANKING_FILE), summary)
    write_trace(os.path.join(args.out, TRACE_FILE), summary.trace)
    for cid, term, score in summary.ranking:
        logger.info('%s %-30s %.4f', cid, term, score)


def cmd_plot(args):
    plot_file(args.input, args.out)


def build_parser():
    parser = argparse.ArgumentParser(
        prog='kgicu',
        description='Knowledge-enhanced multi-modal ICU outcome prediction')
    parser.add_argument('--verbose', action='store_true',
                        help='Log debug messages')
    verbs = parser.add_subparsers(dest='verb')
    verbs.required = True

    p = verbs.add_parser('gen-synth', help='Generate a synthetic dataset')
    p.add_argument('--spec', help='Synthetic spec file (key = value)')
    p.add_argument('--out', required=True, help='Output dataset directory')
    p.add_argument('--seed', type=int, help='Override the spec seed')
    p.set_defaults(func=cmd_gen_synth)

    p = verbs.add_parser('build-kg', help='Build the global knowledge graph')
    p.add_argument('--vocab', required=True, help='Vocabulary TSV')
    p.add_argument('--edges', required=True, help='Ontology edge TSV')
    p.add_argument('--episodes', required=True, help='Dataset directory')
    p.add_argument('--config', help='Config file (threshold, embeddings)')
    p.add_argument('--out', required=True, help='Output JSON file')
    p.set_defaults(func=cmd_build_kg)

    p = verbs.add_parser('train', help='Train a model and save a checkpoint')
    p.add_argument('--task', choices=TASK_CHOICES)
    p.add_argument('--config', help='Config file (key = value)')
    p.add_argument('--data', required=True, help='Dataset directory')
    p.add_argument('--out', required=True, help='Checkpoint path')
    p.set_defaults(func=cmd_train)

    p = verbs.add_parser('evaluate', help='Evaluate a checkpoint')
    p.add_argument('--ckpt', required=True)
    p.add_argument('--data', required=True)
    p.add_argument('--split', default='test', choices=('train', 'val', 'test'))
    p.add_argument('--out', help='Metric CSV')
    p.set_defaults(func=cmd_evaluate)

    p = verbs.add_parser('mask-sweep', help='Evaluate under masked vitals')
    p.add_argument('--ckpt', required=True)
    p.add_argument('--data', required=True)
    p.add_argument('--split', default='test', choices=('train', 'val', 'test'))
    p.add_argument('--ratios', default='0,0.1,...,0.9')
    p.add_argument('--seeds', default=str(len(DEFAULT_SEEDS)),
                   help='Seed count or comma separated seeds')
    p.add_argument('--out', help='Metric CSV')
    p.set_defaults(func=cmd_mask_sweep)

    p = verbs.add_parser('ablate', help='Run the ablation ladder')
    p.add_argument('--task', choices=TASK_CHOICES)
    p.add_argument('--config', help='Config file (key = value)')
    p.add_argument('--data', required=True)
    p.add_argument('--seeds', default=str(len(DEFAULT_SEEDS)))
    p.add_argument('--out', help='Metric CSV')
    p.set_defaults(func=cmd_ablate)

    p = verbs.add_parser('explain', help='Attention report of one episode')
    p.add_argument('--ckpt', required=True)
    p.add_argument('--data', required=True)
    p.add_argument('--episode', required=True,
                   help='"patient_id:index" or a patient id')
    p.add_argument('--out', required=True, help='Output directory')
    p.set_defaults(func=cmd_explain)

    p = verbs.add_parser('plot', help='Render a result file')
    p.add_argument('--in', dest='input', required=True)
    p.add_argument('--out', required=True, help='PNG or SVG path')
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.getLogger('kgicu').setLevel(logging.DEBUG)
    try:
        args.func(args)
    except VALIDATION_ERRORS as e:
        logger.error('%s', e)
        return 2
    except KgIcuError as e:
        logger.error('%s', e)
        return 1
    except (IOError, OSError) as e:
        logger.error('%s', e)
        return 1
    return 0


if __name__ == '__main__':
    sys.exit(main())
