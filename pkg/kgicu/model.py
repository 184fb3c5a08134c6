'''The full model: step encoder, recurrence and task head, plus checkpoints.

A checkpoint is a single binary file:

* a magic line ``KGICU-CKPT 1``,
* one line of JSON (sorted keys) holding the config echo, the task, the
  number of vitals, the global knowledge graph, the vocabulary and the
  parameter index (path, shape and offset of every tensor),
* the parameter values as little-endian 64-bit floats in index order.

Loading a checkpoint reproduces predictions bit-exactly.
'''
import json
import logging
from collections import Counter, OrderedDict

import numpy as np

from .autodiff import ParameterSet, concat_rows, no_tape, sigmoid
from .config import ConfigValidator, TrainConfig
from .encoder import EMPTY_SUBGRAPH, HashingTextEncoder, StepEncoder
from .errors import ConfigurationError, DataFormatError, ShapeError, \
    TaskEligibilityError
from .knowledge import (ConceptEntry, GlobalKnowledgeGraph,
                        SeededEmbeddingProvider, TableEmbeddingProvider,
                        Vocabulary, build_global_kg, count_concepts,
                        query_subgraph)
from .sequence import (HeadParams, RecurrentParams, TaskKind, head_forward,
                       predict, recurrent_forward)

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b'KGICU-CKPT 1\n'
PAYLOAD_DTYPE = '<f8'


class ConceptIndex(object):
    '''Per-step concept occurrence counts of episodes, computed once.

    The counts of the `cache_size` most recently used episodes are kept.

    :param vocabulary: Vocabulary searched in the notes
    :param threshold: Trigram similarity threshold
    :param carry: When `True` the concepts of a step include every concept
        mentioned at an earlier step of the stay
    :param cache_size: Number of episodes whose counts are kept
    '''
    CACHE_SIZE = 4096

    def __init__(self, vocabulary, threshold=0.8, carry=False,
                 cache_size=CACHE_SIZE):
        if vocabulary is None or len(vocabulary) == 0:
            raise ConfigurationError('A concept index needs a non-empty '
                                     'vocabulary')
        if cache_size < 1:
            raise ConfigurationError('cache_size must be >= 1')
        self.vocabulary = vocabulary
        self.threshold = threshold
        self.carry = carry
        self.cache_size = cache_size
        self._cache = OrderedDict()

    def __len__(self):
        return len(self._cache)

    def clear(self):
        self._cache.clear()

    def step_counts(self, episode):
        '''List of :class:`collections.Counter`, one per step.'''
        fingerprint = (episode.key, episode.length,
                       tuple((note.hour, note.text) for note in episode.notes))
        counts = self._cache.get(fingerprint)
        if counts is not None:
            self._cache.move_to_end(fingerprint)
            return counts
        by_step = episode.notes_by_step
        counts = []
        running = Counter()
        for t in range(episode.length):
            texts = [note.text for note in by_step.get(t, [])]
            step = (count_concepts(texts, self.vocabulary, self.threshold)
                    if texts else Counter())
            if self.carry:
                running.update(step)
                step = Counter(running)
            counts.append(step)
        self._cache[fingerprint] = counts
        while len(self._cache) > self.cache_size:
            self._cache.popitem(last=False)
        return counts

    def concept_sets(self, episodes):
        '''Concept set of every (episode, step) with at least one concept.'''
        for episode in episodes:
            for counts in self.step_counts(episode):
                if counts:
                    yield set(counts)


def embedding_provider(config):
    '''Node embedding source named by the config.'''
    if not config.embedding_file:
        return SeededEmbeddingProvider(config.dim, config.embedding_seed)
    provider = TableEmbeddingProvider.load(config.embedding_file)
    if provider.dim != config.dim:
        raise ConfigurationError('Embeddings in {0} have dimension {1}, the '
                                 'model uses {2}'.format(config.embedding_file,
                                                         provider.dim,
                                                         config.dim))
    return provider


def build_kg_for_dataset(episodes, vocabulary, edges, config,
                         concept_index=None):
    '''Global knowledge graph over the concepts mentioned in `episodes`.'''
    if concept_index is None:
        concept_index = ConceptIndex(vocabulary, config.concept_threshold,
                                     config.carry_concepts)
    return build_global_kg(concept_index.concept_sets(episodes),
                           edges or (), embedding_provider(config))


class KnowledgeModel(object):
    '''Encoder, recurrence and head for one task.

    :param config: Training configuration
    :type config: :class:`~kgicu.config.TrainConfig`
    :param n_vs: Number of vital signs
    :param kg: Global knowledge graph, required when `config.use_kg`
    :type kg: :class:`~kgicu.knowledge.GlobalKnowledgeGraph`
    :param vocabulary: Concept vocabulary, required when `config.use_kg`
    :param params: Existing parameters; fresh seeded ones when `None`
    '''
    def __init__(self, config, n_vs, kg=None, vocabulary=None, params=None):
        ConfigValidator(config).validate(n_vs)
        self.config = config
        self.task = config.task_kind
        self.n_vs = n_vs
        self.encoder = StepEncoder(
            n_vs, dim=config.dim, depth=config.gnn_depth,
            kind=config.layer_kind, aggregation=config.aggregation,
            use_ft=config.use_ft, use_gnn=config.use_gnn,
            use_text=config.use_text, use_kg=config.use_kg,
            connectivity=config.vsn_connectivity, groups=config.groups)
        self.text_encoder = HashingTextEncoder(config.dim)
        self.kg = kg
        self.vocabulary = vocabulary
        self.concepts = None
        if config.use_kg:
            if kg is None or vocabulary is None:
                raise ConfigurationError('use_kg needs a knowledge graph and '
                                         'a vocabulary')
            if kg.dim != config.dim:
                raise ConfigurationError('Knowledge graph embeddings have '
                                         'dimension {0}, the model uses {1}'
                                         .format(kg.dim, config.dim))
            self.concepts = ConceptIndex(vocabulary, config.concept_threshold,
                                         config.carry_concepts)
        self.params = params if params is not None else self.init_params()

    def __repr__(self):
        return '<KnowledgeModel {0} {1} params={2}>'.format(
            self.task.value, self.config.layer_kind, self.params.size)

    def init_params(self):
        rng = np.random.RandomState(self.config.seed)
        params = ParameterSet()
        self.encoder.init_params(params, rng)
        RecurrentParams.create(params, self.encoder.output_dim,
                               self.config.hidden_size, rng)
        HeadParams.create(params, self.config.hidden_size, self.task.out_dim,
                          rng)
        return params

    def text_vector(self, episode, t):
        return self.text_encoder([note.text for note in episode.notes_at(t)])

    def subgraph(self, episode, t):
        if self.concepts is None:
            return EMPTY_SUBGRAPH
        counts = self.concepts.step_counts(episode)[t]
        return query_subgraph(self.kg, sorted(counts), counts,
                              self.config.max_kg_nodes)

    def steps_used(self, episode):
        if self.task is TaskKind.MORTALITY:
            window = self.config.mortality_window
            if episode.length < window:
                raise TaskEligibilityError(
                    'Mortality needs {0} steps, episode {1} has {2}'
                    .format(window, episode.key, episode.length))
            return window
        return episode.length

    def encode(self, episode, steps=None):
        '''Hidden states and attention records of the first `steps` steps.'''
        if episode.n_vs != self.n_vs:
            raise ShapeError('Episode {0} has {1} vitals, the model expects '
                             '{2}'.format(episode.key, episode.n_vs,
                                          self.n_vs))
        steps = episode.length if steps is None else steps
        embeddings = []
        records = []
        for t in range(steps):
            embedding, step_records = self.encoder.encode_step(
                self.params, episode.vitals[t], episode.vitals_missing[t],
                self.text_vector(episode, t), self.subgraph(episode, t), t)
            embeddings.append(embedding)
            records.extend(step_records)
        return recurrent_forward(embeddings, RecurrentParams(self.params)), \
            records

    def forward(self, episode):
        '''Task probabilities (a taped tensor) and attention records.

        :returns: ``1 x 1`` (mortality), ``T x 1`` (decompensation) or
            ``1 x 25`` (phenotyping) probabilities
        '''
        hiddens, records = self.encode(episode, self.steps_used(episode))
        return predict(self.task, hiddens, HeadParams(self.params),
                       self.config.mortality_window), records

    def predict(self, episode):
        '''Untaped probabilities as a flat array.'''
        with no_tape():
            probabilities, _ = self.forward(episode)
        return probabilities.numpy().reshape(-1)

    def trace(self, episode):
        '''Head output after every step of the stay, ``T x out_dim``.'''
        with no_tape():
            hiddens, records = self.encode(episode)
            values = sigmoid(head_forward(concat_rows(hiddens),
                                          HeadParams(self.params)))
        return values.numpy(), records

    def labels(self, episode):
        '''Labels of `episode` shaped like :meth:`forward`'s output.'''
        labels = episode.labels[self.task.value]
        if self.task is TaskKind.MORTALITY:
            return np.array([[labels]], dtype=np.float64)
        if self.task is TaskKind.DECOMPENSATION:
            return np.array(labels, dtype=np.float64).reshape(-1, 1)
        return np.array(labels, dtype=np.float64).reshape(1, -1)

    def save(self, path):
        save_checkpoint(path, self)

    @classmethod
    def load(cls, path):
        return load_checkpoint(path)


def _vocabulary_rows(vocabulary):
    return [[cid, e.canonical_term, e.synonyms, e.semantic_group]
            for cid, e in sorted(vocabulary.entries.items())]


def save_checkpoint(path, model):
    index = []
    offset = 0
    for name, param in model.params.items():
        index.append({'path': name, 'shape': param.shape, 'offset': offset})
        offset += param.values.size
    header = {
        'config': model.config.dumps(),
        'task': model.task.value,
        'n_vs': model.n_vs,
        'kg': model.kg.to_json() if model.kg is not None else None,
        'vocabulary': (_vocabulary_rows(model.vocabulary)
                       if model.vocabulary is not None else None),
        'params': index,
    }
    with open(path, 'wb') as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(json.dumps(header, sort_keys=True).encode('utf-8'))
        f.write(b'\n')
        for _, param in model.params.items():
            f.write(param.values.astype(PAYLOAD_DTYPE).tobytes())
    logger.info('Saved checkpoint %s (%d values)', path, offset)


def load_checkpoint(path):
    '''Rebuild a :class:`KnowledgeModel` from a checkpoint file.

    :raises: :class:`~kgicu.errors.DataFormatError` on a damaged file
    '''
    with open(path, 'rb') as f:
        magic = f.readline()
        if magic != CHECKPOINT_MAGIC:
            raise DataFormatError(path, 1, 'not a checkpoint')
        try:
            header = json.loads(f.readline().decode('utf-8'))
        except ValueError as e:
            raise DataFormatError(path, 2, 'bad header: {0}'.format(e))
        payload = np.frombuffer(f.read(), dtype=PAYLOAD_DTYPE)
    config = TrainConfig.loads(header['config'], source=path)
    kg = (GlobalKnowledgeGraph.from_json(header['kg'])
          if header['kg'] is not None else None)
    vocabulary = None
    if header['vocabulary'] is not None:
        vocabulary = Vocabulary(ConceptEntry(*row)
                                for row in header['vocabulary'])
    params = ParameterSet()
    for entry in header['params']:
        size = int(np.prod(entry['shape']))
        values = payload[entry['offset']:entry['offset'] + size]
        if values.size != size:
            raise DataFormatError(path, 3, 'payload too short for "{0}"'
                                  .format(entry['path']))
        params.add(entry['path'],
                   values.astype(np.float64).reshape(entry['shape']))
    model = KnowledgeModel(config, header['n_vs'], kg, vocabulary, params)
    try:
        model.encoder.layers(params)
        RecurrentParams(params)
        HeadParams(params)
    except KeyError as e:
        raise DataFormatError(path, 2, 'missing parameter {0}'.format(e))
    logger.info('Loaded checkpoint %s: %r', path, model)
    return model
