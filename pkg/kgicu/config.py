'''Training configuration and its plain-text file format.

Config files hold one ``key = value`` pair per line; ``#`` starts a comment.
Every key is a :class:`TrainConfig` field; missing keys keep their defaults.

.. code-block:: text

    task = decompensation
    layer_kind = attention   # needed for attention reports
    epochs = 10

'''
import codecs
import copy
import logging

from .encoder import AGGREGATIONS, CONNECTIVITIES, LAYER_KINDS
from .errors import ConfigurationError
from .sequence import DEFAULT_HIDDEN, MORTALITY_WINDOW, TaskKind

logger = logging.getLogger(__name__)

_TRUE = ('true', '1', 'yes', 'on')
_FALSE = ('false', '0', 'no', 'off')


def parse_bool(text):
    value = text.strip().lower()
    if value in _TRUE:
        return True
    if value in _FALSE:
        return False
    raise ValueError('not a boolean: {0!r}'.format(text))


def format_value(value):
    if isinstance(value, bool):
        return 'true' if value else 'false'
    return str(value)


def parse_fields(text, fields, source='<string>'):
    '''Parse ``key = value`` lines into a dict, typed by `fields`.

    :param fields: ``(name, parser, default)`` triples naming the known keys
    :raises: :class:`~kgicu.errors.ConfigurationError` naming the line of an
        unknown key or a bad value
    '''
    parsers = dict((name, parser) for name, parser, _ in fields)
    values = {}
    for line_no, line in enumerate(text.splitlines(), 1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigurationError('{0}:{1}: expected "key = value"'
                                     .format(source, line_no))
        key, value = [part.strip() for part in line.split('=', 1)]
        if key not in parsers:
            raise ConfigurationError('{0}:{1}: unknown key "{2}"'
                                     .format(source, line_no, key))
        try:
            values[key] = parsers[key](value)
        except ValueError as e:
            raise ConfigurationError('{0}:{1}: bad value for {2}: {3}'
                                     .format(source, line_no, key, e))
    return values


def dump_fields(obj, fields):
    return ''.join('{0} = {1}\n'.format(name, format_value(getattr(obj, name)))
                   for name, _, _ in fields)


# (name, parser, default)
FIELDS = (
    ('task', str, TaskKind.MORTALITY.value),
    ('batch_size', int, 8),
    ('epochs', int, None),
    ('learning_rate', float, 1e-4),
    ('dim', int, 64),
    ('hidden_size', int, DEFAULT_HIDDEN),
    ('gnn_depth', int, 2),
    ('layer_kind', str, 'sage'),
    ('aggregation', str, 'sum'),
    ('max_kg_nodes', int, 30),
    ('use_ft', parse_bool, True),
    ('use_gnn', parse_bool, True),
    ('use_text', parse_bool, True),
    ('use_kg', parse_bool, True),
    ('seed', int, 0),
    ('split_seed', int, 0),
    ('concept_threshold', float, 0.8),
    ('carry_concepts', parse_bool, False),
    ('vsn_connectivity', str, 'full'),
    ('vsn_groups', str, ''),
    ('mortality_window', int, MORTALITY_WINDOW),
    ('embedding_seed', int, 0),
    ('embedding_file', str, ''),
)

FIELD_NAMES = tuple(name for name, _, _ in FIELDS)

ABLATION_FLAGS = ('use_ft', 'use_gnn', 'use_text', 'use_kg')


class TrainConfig(object):
    '''Everything a training run needs besides the data.

    Defaults are the best values of the hyperparameter search: learning rate
    1e-4, two sage layers of width 64, 30 KG nodes, sum aggregation, hidden
    size 100. `epochs` defaults to 20, or 40 for phenotyping.
    '''
    def __init__(self, **values):
        for name, _, default in FIELDS:
            setattr(self, name, values.pop(name, default))
        if values:
            raise ConfigurationError('Unknown config keys: {0}'
                                     .format(', '.join(sorted(values))))
        if self.epochs is None:
            self.epochs = (40 if self.task in ('phenotyping', 'pheno')
                           else 20)

    def __repr__(self):
        return '<TrainConfig {0}>'.format(', '.join(
            '{0}={1}'.format(name, format_value(getattr(self, name)))
            for name in FIELD_NAMES))

    def __eq__(self, other):
        return (isinstance(other, TrainConfig) and
                self.as_dict() == other.as_dict())

    def __ne__(self, other):
        return not self == other

    @property
    def task_kind(self):
        return TaskKind.parse(self.task)

    @property
    def groups(self):
        '''Vital index -> group label parsed from `vsn_groups`.'''
        if not self.vsn_groups:
            return None
        labels = [g.strip() for g in self.vsn_groups.split(',')]
        return dict(enumerate(labels))

    def as_dict(self):
        return dict((name, getattr(self, name)) for name in FIELD_NAMES)

    def replace(self, **changes):
        config = copy.copy(self)
        for name, value in changes.items():
            if name not in FIELD_NAMES:
                raise ConfigurationError('Unknown config key "{0}"'
                                         .format(name))
            setattr(config, name, value)
        return config

    def dumps(self):
        return dump_fields(self, FIELDS)

    @classmethod
    def loads(cls, text, source='<string>', **overrides):
        '''Parse a config file's text; `overrides` win over file values.'''
        values = parse_fields(text, FIELDS, source)
        values.update(overrides)
        return cls(**values)

    @classmethod
    def load(cls, path, **overrides):
        with codecs.open(path, 'r', 'utf-8') as f:
            return cls.loads(f.read(), source=path, **overrides)

    def save(self, path):
        with codecs.open(path, 'w', 'utf-8') as f:
            f.write(self.dumps())


class ConfigValidator(object):
    def __init__(self, config):
        self.config = config
        self.template = 'Config error: {0}'

    def _raise(self, msg):
        raise ConfigurationError(self.template.format(msg))

    def validate(self, n_vs=None):
        config = self.config
        TaskKind.parse(config.task)
        for name in ('batch_size', 'dim', 'hidden_size', 'mortality_window'):
            if getattr(config, name) < 1:
                self._raise('{0} must be >= 1'.format(name))
        for name in ('epochs', 'gnn_depth', 'max_kg_nodes'):
            if getattr(config, name) < 0:
                self._raise('{0} must be >= 0'.format(name))
        if not config.learning_rate > 0:
            self._raise('learning_rate must be positive')
        if not 0.0 < config.concept_threshold <= 1.0:
            self._raise('concept_threshold must be in (0, 1]')
        if config.layer_kind not in LAYER_KINDS:
            self._raise('layer_kind must be one of {0}'.format(LAYER_KINDS))
        if config.aggregation not in AGGREGATIONS:
            self._raise('aggregation must be one of {0}'.format(AGGREGATIONS))
        if config.vsn_connectivity not in CONNECTIVITIES:
            self._raise('vsn_connectivity must be one of {0}'
                        .format(CONNECTIVITIES))
        self.validate_ablation()
        if n_vs is not None and config.vsn_connectivity == 'grouped':
            groups = config.groups
            if groups is None or len(groups) != n_vs:
                self._raise('vsn_groups must name a group for each of the '
                            '{0} vitals'.format(n_vs))
        return config

    def validate_ablation(self):
        config = self.config
        if config.use_kg and not config.use_gnn:
            self._raise('use_kg requires use_gnn')
        if config.use_gnn and not config.use_ft:
            self._raise('use_gnn requires use_ft')
