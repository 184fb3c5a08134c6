'''Concept vocabulary, concept extraction and the global knowledge graph.

The vocabulary and the ontology edges are plain TSV files. Concepts are found
in note text by approximate dictionary matching: word n-grams of the
normalized text are compared with every vocabulary term by the Jaccard
similarity of their character trigrams. The concepts found over all patients
and timesteps become the nodes of the :class:`GlobalKnowledgeGraph`, and the
ontology edges between two such nodes become its edges.
'''
import codecs
import hashlib
import json
import logging
import re
from collections import Counter

import numpy as np

from .errors import ConfigurationError, DataFormatError, ShapeError

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.8

_NOT_WORD = re.compile(r'[\W_]+', re.UNICODE)


def normalize_text(text):
    '''Lowercase, replace punctuation with spaces, collapse whitespace.

    Letters of any script count as word characters.
    '''
    return ' '.join(_NOT_WORD.sub(' ', text.lower()).split())


def trigrams(text):
    '''Set of character trigrams. Strings shorter than 3 are one gram.'''
    if len(text) < 3:
        return frozenset([text]) if text else frozenset()
    return frozenset(text[i:i + 3] for i in range(len(text) - 2))


def jaccard(a, b):
    if not a and not b:
        return 1.0
    return len(a & b) / float(len(a | b))


class ConceptEntry(object):
    '''One vocabulary concept.

    :param concept_id: CUI-like identifier, e.g. ``"C0030231"``
    :param canonical_term: Preferred name (normalized on construction)
    :param synonyms: Alternative names (normalized on construction)
    :param semantic_group: Free-form group label
    '''
    def __init__(self, concept_id, canonical_term, synonyms=(),
                 semantic_group=''):
        self.concept_id = concept_id
        self.canonical_term = normalize_text(canonical_term)
        self.synonyms = [normalize_text(s) for s in synonyms
                         if normalize_text(s)]
        self.semantic_group = semantic_group
        if not self.canonical_term:
            raise ConfigurationError('Concept "{0}" has an empty canonical '
                                     'term'.format(concept_id))

    def __repr__(self):
        return '<ConceptEntry {0} {1!r}>'.format(self.concept_id,
                                                 self.canonical_term)

    @property
    def terms(self):
        return [self.canonical_term] + self.synonyms


class Vocabulary(object):
    '''Concept entries plus the term index used by the matcher.'''
    def __init__(self, entries=()):
        self.entries = {}
        self._terms = []
        self.max_term_words = 0
        for entry in entries:
            self.add(entry)

    def __len__(self):
        return len(self.entries)

    def __contains__(self, concept_id):
        return concept_id in self.entries

    def __getitem__(self, concept_id):
        return self.entries[concept_id]

    def add(self, entry):
        if entry.concept_id in self.entries:
            raise ConfigurationError('Duplicate concept id "{0}"'
                                     .format(entry.concept_id))
        self.entries[entry.concept_id] = entry
        for term in entry.terms:
            self._terms.append((term, trigrams(term), entry.concept_id))
            self.max_term_words = max(self.max_term_words,
                                      len(term.split()))

    @property
    def terms(self):
        return self._terms

    def term_of(self, concept_id):
        return self.entries[concept_id].canonical_term

    @classmethod
    def load(cls, path):
        '''Read the vocabulary TSV: id, term, ``|``-separated synonyms, group.
        '''
        vocabulary = cls()
        with codecs.open(path, 'r', 'utf-8') as f:
            for line_no, line in enumerate(f, 1):
                if line_no == 1 or not line.strip():
                    continue
                fields = line.rstrip('\n').split('\t')
                if len(fields) != 4:
                    raise DataFormatError(path, line_no,
                                          'expected 4 columns, got {0}'
                                          .format(len(fields)))
                concept_id, term, synonyms, group = fields
                synonyms = [s for s in synonyms.split('|') if s]
                try:
                    vocabulary.add(ConceptEntry(concept_id, term, synonyms,
                                                group))
                except ConfigurationError as e:
                    raise DataFormatError(path, line_no, str(e))
        logger.info('Loaded %d concepts from %s', len(vocabulary), path)
        return vocabulary

    def save(self, path):
        with codecs.open(path, 'w', 'utf-8') as f:
            f.write('concept_id\tcanonical_term\tsynonyms\tsemantic_group\n')
            for concept_id in sorted(self.entries):
                entry = self.entries[concept_id]
                f.write('{0}\t{1}\t{2}\t{3}\n'.format(
                    concept_id, entry.canonical_term,
                    '|'.join(entry.synonyms), entry.semantic_group))


def load_edges(path):
    '''Read the ontology edge TSV (two ids per line, ``#`` comments).'''
    edges = set()
    with codecs.open(path, 'r', 'utf-8') as f:
        for line_no, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith('#'):
                continue
            fields = line.split('\t')
            if len(fields) != 2:
                raise DataFormatError(path, line_no,
                                      'expected 2 concept ids, got {0}'
                                      .format(len(fields)))
            edge = canonical_edge(*fields)
            if edge is not None:
                edges.add(edge)
    return edges


def save_edges(path, edges):
    with codecs.open(path, 'w', 'utf-8') as f:
        f.write('# undirected ontology edges\n')
        for u, v in sorted(edges):
            f.write('{0}\t{1}\n'.format(u, v))


def canonical_edge(u, v):
    '''Unordered pair in sorted order, `None` for a self-loop.'''
    if u == v:
        return None
    return (u, v) if u < v else (v, u)


def _candidate_spans(text, max_words):
    words = normalize_text(text).split()
    for n in range(1, max_words + 1):
        for i in range(len(words) - n + 1):
            yield ' '.join(words[i:i + n])


def count_concepts(note_texts, vocabulary, threshold=DEFAULT_THRESHOLD):
    '''Count matching spans per concept over all notes.

    :returns: concept id -> number of spans matched in the notes
    :rtype: :class:`collections.Counter`
    '''
    if vocabulary is None or len(vocabulary) == 0:
        raise ConfigurationError('Concept extraction needs a non-empty '
                                 'vocabulary')
    if not 0.0 < threshold <= 1.0:
        raise ConfigurationError('Threshold must be in (0, 1], got {0}'
                                 .format(threshold))
    counts = Counter()
    for text in note_texts:
        for span in _candidate_spans(text, vocabulary.max_term_words):
            grams = trigrams(span)
            matched = set()
            for term, term_grams, concept_id in vocabulary.terms:
                if concept_id in matched:
                    continue
                small, large = sorted((len(grams), len(term_grams)))
                # Jaccard is bounded by the size ratio of the two sets
                if large == 0 or small < threshold * large:
                    continue
                if span == term or jaccard(grams, term_grams) >= threshold:
                    matched.add(concept_id)
            counts.update(matched)
    return counts


def extract_concepts(note_texts, vocabulary, threshold=DEFAULT_THRESHOLD):
    '''Concept ids mentioned in `note_texts`.

    :param note_texts: Notes to scan
    :type note_texts: list of str
    :param vocabulary: Loaded vocabulary
    :type vocabulary: :class:`Vocabulary`
    :param threshold: Minimal trigram Jaccard similarity, in (0, 1]
    :type threshold: float
    :rtype: set of str
    '''
    return set(count_concepts(note_texts, vocabulary, threshold))


def embed_node(concept_id, d, seed):
    '''Deterministic unit-norm Gaussian vector for a concept.'''
    digest = hashlib.sha256(
        '{0}\x00{1}'.format(seed, concept_id).encode('utf-8')).digest()
    rng = np.random.RandomState(int.from_bytes(digest[:4], 'little'))
    vector = rng.standard_normal(d)
    return vector / np.linalg.norm(vector)


class SeededEmbeddingProvider(object):
    '''Stand-in for pretrained node descriptors: :func:`embed_node` vectors.'''
    def __init__(self, dim, seed=0):
        if dim < 1:
            raise ConfigurationError('Embedding dimension must be >= 1')
        self.dim = dim
        self.seed = seed

    def __call__(self, concept_id):
        return embed_node(concept_id, self.dim, self.seed)


class TableEmbeddingProvider(object):
    '''Node embeddings read from a TSV file: id followed by `d` floats.'''
    def __init__(self, table):
        dims = set(len(v) for v in table.values())
        if len(dims) > 1:
            raise ShapeError('Embedding table mixes dimensions {0}'
                             .format(sorted(dims)))
        self.table = table
        self.dim = dims.pop() if dims else 0

    def __call__(self, concept_id):
        try:
            return self.table[concept_id]
        except KeyError:
            raise ConfigurationError('No embedding for concept "{0}"'
                                     .format(concept_id))

    @classmethod
    def load(cls, path):
        table = {}
        with codecs.open(path, 'r', 'utf-8') as f:
            for line_no, line in enumerate(f, 1):
                fields = line.split()
                if not fields:
                    continue
                try:
                    table[fields[0]] = np.array([float(x) for x in fields[1:]])
                except ValueError as e:
                    raise DataFormatError(path, line_no, str(e))
        return cls(table)


class GlobalKnowledgeGraph(object):
    '''Concept nodes, undirected edges and one embedding per node.

    Immutable once built; concurrent read-only queries are safe.
    '''
    def __init__(self, nodes, edges, embeddings, dim):
        self.nodes = frozenset(nodes)
        self.edges = frozenset(edges)
        self.dim = dim
        self._embeddings = {}
        for node in self.nodes:
            vector = np.array(embeddings[node], dtype=np.float64)
            if vector.shape != (dim,):
                raise ShapeError('Embedding of "{0}" has shape {1}, expected '
                                 '({2},)'.format(node, vector.shape, dim))
            vector.setflags(write=False)
            self._embeddings[node] = vector
        self._neighbours = dict((node, set()) for node in self.nodes)
        for u, v in self.edges:
            self._neighbours[u].add(v)
            self._neighbours[v].add(u)

    def __repr__(self):
        return '<GlobalKnowledgeGraph nodes={0} edges={1}>'.format(
            len(self.nodes), len(self.edges))

    def embedding(self, concept_id):
        return self._embeddings[concept_id]

    def neighbours(self, concept_id):
        return self._neighbours[concept_id]

    def to_json(self):
        return {
            'dim': self.dim,
            'nodes': sorted(self.nodes),
            'edges': [list(e) for e in sorted(self.edges)],
            'embeddings': dict((n, self._embeddings[n].tolist())
                               for n in sorted(self.nodes)),
        }

    @classmethod
    def from_json(cls, data):
        return cls(data['nodes'], [tuple(e) for e in data['edges']],
                   data['embeddings'], data['dim'])

    def save(self, path):
        with codecs.open(path, 'w', 'utf-8') as f:
            json.dump(self.to_json(), f, sort_keys=True)

    @classmethod
    def load(cls, path):
        with codecs.open(path, 'r', 'utf-8') as f:
            return cls.from_json(json.load(f))


def build_global_kg(concept_sets, ontology_edges, embed_provider):
    '''Union the concept sets and keep the ontology edges inside the union.

    :param concept_sets: Concepts found per patient and timestep
    :type concept_sets: iterable of set
    :param ontology_edges: Concept id pairs
    :param embed_provider: Callable mapping a concept id to its vector; has a
        `dim` attribute
    :rtype: :class:`GlobalKnowledgeGraph`
    '''
    nodes = set()
    for concepts in concept_sets:
        nodes.update(concepts)
    edges = set()
    for u, v in ontology_edges:
        edge = canonical_edge(u, v)
        if edge is not None and u in nodes and v in nodes:
            edges.add(edge)
    embeddings = dict((node, embed_provider(node)) for node in nodes)
    graph = GlobalKnowledgeGraph(nodes, edges, embeddings, embed_provider.dim)
    logger.info('Built %r', graph)
    return graph


class KGSubgraph(object):
    '''Restriction of the global graph to the concepts of one timestep.

    .. attribute:: concept_ids

        Node index map: local index -> concept id.

    .. attribute:: edges

        Sorted list of local index pairs ``(i, j)`` with ``i < j``.

    .. attribute:: features

        ``k x d`` array of node embeddings in index order, `None` if empty.
    '''
    def __init__(self, concept_ids, edges, features):
        self.concept_ids = list(concept_ids)
        self.edges = list(edges)
        self.features = features

    def __len__(self):
        return len(self.concept_ids)

    def __repr__(self):
        return '<KGSubgraph k={0} edges={1}>'.format(len(self),
                                                     len(self.edges))


def select_nodes(candidates, occurrence_counts, max_kg_nodes):
    '''Top `max_kg_nodes` by count, ties by ascending id, in that order.'''
    ranked = sorted(candidates,
                    key=lambda c: (-occurrence_counts.get(c, 0), c))
    return ranked[:max_kg_nodes]


def query_subgraph(graph, concepts, occurrence_counts, max_kg_nodes):
    '''Subgraph of `graph` induced by the timestep's concepts.

    Concepts that are not nodes of `graph` are dropped. When more than
    `max_kg_nodes` remain, the most frequently mentioned are kept.

    :rtype: :class:`KGSubgraph`
    '''
    if max_kg_nodes < 0:
        raise ConfigurationError('max_kg_nodes must be >= 0')
    candidates = [c for c in concepts if c in graph.nodes]
    kept = select_nodes(candidates, occurrence_counts, max_kg_nodes)
    index = dict((c, i) for i, c in enumerate(kept))
    edges = []
    for concept_id in kept:
        i = index[concept_id]
        for other in graph.neighbours(concept_id):
            j = index.get(other)
            if j is not None and i < j:
                edges.append((i, j))
    features = (np.array([graph.embedding(c) for c in kept])
                if kept else None)
    return KGSubgraph(kept, sorted(edges), features)
