'''Per-timestep multi-modal graph encoder.

For one timestep the vitals are tokenized into one node each, a text node
carrying the note embedding is attached to every vital, and the timestep's
knowledge subgraph is spliced in with an edge from every vital/text node to
every concept node. A stack of message-passing layers runs over that graph and
a non-parametric reduction turns the node features into the step embedding.

Node indices follow a fixed layout: ``0 .. n_vs - 1`` are vitals, ``n_vs`` is
the text node and the knowledge-graph concepts follow.
'''
import codecs
import hashlib
import json
import logging
from itertools import combinations

import numpy as np

from .autodiff import (add, concat_rows, constant, glorot_uniform, leaky_relu,
                       matmul, max_rows, mean_rows, multiply, relu,
                       row_softmax, slice_rows, sum_rows, transpose)
from .errors import ConfigurationError, ContractError, InputError, ShapeError
from .knowledge import KGSubgraph

logger = logging.getLogger(__name__)

LAYER_KINDS = ('gcn', 'attention', 'sage')
AGGREGATIONS = ('sum', 'mean', 'max')
CONNECTIVITIES = ('full', 'grouped')

EMPTY_SUBGRAPH = KGSubgraph([], [], None)


class TokenizerParams(object):
    '''Per-vital affine maps and learned missing-value embeddings.

    Wraps the ``tokenizer.weight``, ``tokenizer.bias`` and
    ``tokenizer.missing`` entries (each ``n_vs x d``) of a parameter set.
    '''
    PREFIX = 'tokenizer'

    def __init__(self, params):
        self.weight = params[self.PREFIX + '.weight']
        self.bias = params[self.PREFIX + '.bias']
        self.missing = params[self.PREFIX + '.missing']

    @property
    def n_vs(self):
        return self.weight.rows

    @property
    def dim(self):
        return self.weight.cols

    @classmethod
    def create(cls, params, n_vs, dim, rng):
        params.add(cls.PREFIX + '.weight', glorot_uniform(rng, n_vs, dim))
        params.add(cls.PREFIX + '.bias', np.zeros((n_vs, dim)))
        params.add(cls.PREFIX + '.missing',
                   rng.normal(0.0, 0.1, size=(n_vs, dim)))
        return cls(params)


class GNNLayerParams(object):
    '''Weights of one message-passing layer.

    `gcn` and `attention` layers use a ``d x d`` weight; `sage` concatenates
    self and neighbour mean and uses a ``2d x d`` weight. `attention` layers
    carry an extra ``2d x 1`` attention vector.
    '''
    def __init__(self, kind, index, params):
        if kind not in LAYER_KINDS:
            raise ConfigurationError('Unknown layer kind "{0}"'.format(kind))
        prefix = 'gnn.{0}.'.format(index)
        self.kind = kind
        self.index = index
        self.weight = params[prefix + 'weight']
        self.bias = params[prefix + 'bias']
        self.attention = (params[prefix + 'attention']
                          if kind == 'attention' else None)

    @classmethod
    def create(cls, params, kind, index, dim, rng):
        if kind not in LAYER_KINDS:
            raise ConfigurationError('Unknown layer kind "{0}"'.format(kind))
        prefix = 'gnn.{0}.'.format(index)
        rows = 2 * dim if kind == 'sage' else dim
        params.add(prefix + 'weight', glorot_uniform(rng, rows, dim))
        params.add(prefix + 'bias', np.zeros((1, dim)))
        if kind == 'attention':
            params.add(prefix + 'attention', glorot_uniform(rng, 2 * dim, 1))
        return cls(kind, index, params)


class StepGraph(object):
    '''The dynamic graph of one timestep.

    :param node_features: ``(n_vs + 1 + k) x d`` tensor
    :param node_roles: ``'vital:<j>'``, ``'text'`` or ``'kg:<concept id>'``
        per node index
    :param edges: Undirected local index pairs ``(i, j)``, ``i < j``
    '''
    def __init__(self, node_features, node_roles, edges):
        self.node_features = node_features
        self.node_roles = list(node_roles)
        self.edges = frozenset(edges)

    def __repr__(self):
        return '<StepGraph nodes={0} edges={1}>'.format(self.num_nodes,
                                                        len(self.edges))

    @property
    def num_nodes(self):
        return len(self.node_roles)

    def adjacency(self):
        n = self.num_nodes
        a = np.zeros((n, n))
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1.0
        return a


class AttentionRecord(object):
    '''Attention coefficients of one layer at one timestep.

    `alpha[u, v]` is the weight node `u` gives to node `v`; it is zero where
    `v` is outside the closed neighbourhood of `u`.
    '''
    def __init__(self, layer, timestep, alpha, node_roles):
        self.layer = layer
        self.timestep = timestep
        self.alpha = alpha
        self.node_roles = list(node_roles)

    def __repr__(self):
        return '<AttentionRecord t={0} layer={1} n={2}>'.format(
            self.timestep, self.layer, len(self.node_roles))

    def to_json(self):
        return {
            'timestep': self.timestep,
            'layer': self.layer,
            'n': len(self.node_roles),
            'alpha': self.alpha.reshape(-1).tolist(),
            'roles': self.node_roles,
        }

    @classmethod
    def from_json(cls, data):
        n = data['n']
        return cls(data['layer'], data['timestep'],
                   np.array(data['alpha']).reshape(n, n), data['roles'])


def write_attention_records(path, records):
    with codecs.open(path, 'w', 'utf-8') as f:
        for record in records:
            f.write(json.dumps(record.to_json(), sort_keys=True))
            f.write('\n')


def read_attention_records(path):
    with codecs.open(path, 'r', 'utf-8') as f:
        return [AttentionRecord.from_json(json.loads(line))
                for line in f if line.strip()]


def feature_tokenize(x, missing_mask, params):
    '''Turn each vital into a `d`-dimensional node embedding.

    Row `j` is ``x[j] * W[j] + b[j]`` for an observed vital and the learned
    missing embedding ``m[j]`` for a missing one.

    :param x: Vital values, length `n_vs` (missing entries are ignored)
    :param missing_mask: `True` where the vital is missing
    :param params: Tokenizer weights
    :type params: :class:`TokenizerParams`
    :rtype: :class:`~kgicu.autodiff.Tensor`
    '''
    x = np.asarray(x, dtype=np.float64)
    missing = np.asarray(missing_mask, dtype=bool)
    if x.shape != (params.n_vs,) or missing.shape != (params.n_vs,):
        raise ShapeError('Tokenizer expects {0} vitals, got values {1} and '
                         'mask {2}'.format(params.n_vs, x.shape,
                                           missing.shape))
    present = ~missing
    if not np.all(np.isfinite(x[present])):
        raise InputError('Observed vital values must be finite: {0}'
                         .format(x))
    d = params.dim
    values = np.repeat(np.where(present, x, 0.0)[:, None], d, axis=1)
    observed = np.repeat(present[:, None].astype(np.float64), d, axis=1)
    return add(add(multiply(constant(values), params.weight),
                   multiply(constant(observed), params.bias)),
               multiply(constant(1.0 - observed), params.missing))


def _token_code(token):
    digest = hashlib.md5(token.encode('utf-8')).digest()
    return int.from_bytes(digest[:4], 'little'), 1.0 if digest[4] & 1 else -1.0


def encode_text(notes_at_t, d):
    '''Feature-hashing stand-in for a clinical text encoder.

    Every whitespace token is hashed into one of `d` buckets with a +-1 sign;
    the sum is scaled by ``1 / sqrt(token count)``. No notes give the zero
    vector.

    :param notes_at_t: Note texts of one timestep
    :type notes_at_t: list of str
    :rtype: :class:`numpy.ndarray`
    '''
    vector = np.zeros(d)
    tokens = [token for text in notes_at_t for token in text.lower().split()]
    if not tokens:
        return vector
    for token in tokens:
        bucket, sign = _token_code(token)
        vector[bucket % d] += sign
    return vector / np.sqrt(len(tokens))


class HashingTextEncoder(object):
    '''Pluggable text encoder interface: ``encoder(notes) -> vector(dim)``.'''
    def __init__(self, dim):
        self.dim = dim

    def __call__(self, notes_at_t):
        return encode_text(notes_at_t, self.dim)


def build_vsn_edges(n_vs, connectivity='full', groups=None):
    '''Edges of the vitals-and-text graph.

    :param n_vs: Number of vitals; the text node has index `n_vs`
    :param connectivity: ``'full'`` (every vital pair) or ``'grouped'``
        (pairs inside the same group)
    :param groups: Vital index -> group label, required when grouped
    :rtype: set of tuple
    '''
    if connectivity not in CONNECTIVITIES:
        raise ConfigurationError('Unknown connectivity "{0}"'
                                 .format(connectivity))
    if connectivity == 'full':
        edges = set(combinations(range(n_vs), 2))
    else:
        if groups is None or any(j not in groups for j in range(n_vs)):
            raise ConfigurationError('Grouped connectivity needs a group for '
                                     'each of the {0} vitals'.format(n_vs))
        edges = set((i, j) for i, j in combinations(range(n_vs), 2)
                    if groups[i] == groups[j])
    edges.update((j, n_vs) for j in range(n_vs))
    return edges


def assemble_step_graph(vsn_features, vsn_edges, kg_sub):
    '''Join the vitals/text graph and the knowledge subgraph.

    KG node `i` gets index ``n_vs + 1 + i``; every vitals/text node is linked
    to every KG node.

    :param vsn_features: ``(n_vs + 1) x d`` tensor, text node last
    :param vsn_edges: Edges among the vitals/text nodes
    :param kg_sub: Knowledge subgraph of the timestep
    :type kg_sub: :class:`~kgicu.knowledge.KGSubgraph`
    :rtype: :class:`StepGraph`
    '''
    n_vsn = vsn_features.rows
    roles = ['vital:{0}'.format(j) for j in range(n_vsn - 1)] + ['text']
    edges = set(vsn_edges)
    features = vsn_features
    k = len(kg_sub)
    if k:
        if kg_sub.features.shape != (k, vsn_features.cols):
            raise ShapeError('KG features have shape {0}, expected ({1}, {2})'
                             .format(kg_sub.features.shape, k,
                                     vsn_features.cols))
        features = concat_rows([vsn_features, constant(kg_sub.features)])
        roles.extend('kg:{0}'.format(c) for c in kg_sub.concept_ids)
        edges.update((n_vsn + i, n_vsn + j) for i, j in kg_sub.edges)
        edges.update((u, n_vsn + v) for u in range(n_vsn) for v in range(k))
    return StepGraph(features, roles, edges)


def _gcn_layer(h, adjacency, layer):
    closed = adjacency + np.eye(adjacency.shape[0])
    scale = 1.0 / np.sqrt(closed.sum(axis=1))
    normalized = scale[:, None] * closed * scale[None, :]
    return relu(add(matmul(matmul(constant(normalized), h), layer.weight),
                    layer.bias))


def _sage_layer(h, adjacency, layer):
    d = h.cols
    degree = adjacency.sum(axis=1)
    mean = adjacency / np.maximum(degree, 1.0)[:, None]
    neighbours = matmul(constant(mean), h)
    return relu(add(add(matmul(h, slice_rows(layer.weight, 0, d)),
                        matmul(neighbours, slice_rows(layer.weight, d, 2 * d))),
                    layer.bias))


def _attention_layer(h, adjacency, layer):
    n, d = h.rows, h.cols
    wh = matmul(h, layer.weight)
    source = matmul(wh, slice_rows(layer.attention, 0, d))
    target = matmul(wh, slice_rows(layer.attention, d, 2 * d))
    scores = add(matmul(source, constant(np.ones((1, n)))),
                 matmul(constant(np.ones((n, 1))), transpose(target)))
    alpha = row_softmax(leaky_relu(scores),
                        mask=(adjacency + np.eye(n)) > 0)
    return relu(add(matmul(alpha, wh), layer.bias)), alpha


def gnn_forward(graph, layers, timestep=None):
    '''Run message-passing layers over a step graph.

    :param graph: The timestep graph
    :type graph: :class:`StepGraph`
    :param layers: Layer weights, applied in order; empty is the identity
    :type layers: list of :class:`GNNLayerParams`
    :returns: updated node features and one :class:`AttentionRecord` per
        attention layer
    :rtype: tuple
    '''
    h = graph.node_features
    adjacency = graph.adjacency()
    records = []
    for position, layer in enumerate(layers):
        if layer.kind == 'gcn':
            h = _gcn_layer(h, adjacency, layer)
        elif layer.kind == 'sage':
            h = _sage_layer(h, adjacency, layer)
        else:
            h, alpha = _attention_layer(h, adjacency, layer)
            records.append(AttentionRecord(position, timestep, alpha.numpy(),
                                           graph.node_roles))
    return h, records


def aggregate_nodes(node_features, mode='sum'):
    '''Column-wise reduction of all node features into one ``1 x d`` row.'''
    if mode not in AGGREGATIONS:
        raise ConfigurationError('Unknown aggregation "{0}"'.format(mode))
    if node_features is None or node_features.rows < 1:
        raise ContractError('Cannot aggregate an empty graph')
    if mode == 'sum':
        return sum_rows(node_features)
    if mode == 'mean':
        return mean_rows(node_features)
    return max_rows(node_features)


class StepEncoder(object):
    '''Turns one timestep's vitals, notes and concepts into a step embedding.

    The ablation flags select the path: without the feature tokenizer the step
    embedding is the raw vitals row (missing entries zeroed), followed by the
    text vector when text is used; with it, the vitals/text graph is built,
    the KG subgraph spliced in when `use_kg`, and message passing runs when
    `use_gnn`.
    '''
    def __init__(self, n_vs, dim=64, depth=2, kind='sage', aggregation='sum',
                 use_ft=True, use_gnn=True, use_text=True, use_kg=True,
                 connectivity='full', groups=None):
        if kind not in LAYER_KINDS:
            raise ConfigurationError('Unknown layer kind "{0}"'.format(kind))
        if aggregation not in AGGREGATIONS:
            raise ConfigurationError('Unknown aggregation "{0}"'
                                     .format(aggregation))
        self.n_vs = n_vs
        self.dim = dim
        self.depth = depth if use_gnn else 0
        self.kind = kind
        self.aggregation = aggregation
        self.use_ft = use_ft
        self.use_gnn = use_gnn
        self.use_text = use_text
        self.use_kg = use_kg
        self.vsn_edges = build_vsn_edges(n_vs, connectivity, groups)

    @property
    def output_dim(self):
        if self.use_ft:
            return self.dim
        return self.n_vs + (self.dim if self.use_text else 0)

    def init_params(self, params, rng):
        if self.use_ft:
            TokenizerParams.create(params, self.n_vs, self.dim, rng)
        for index in range(self.depth):
            GNNLayerParams.create(params, self.kind, index, self.dim, rng)

    def layers(self, params):
        return [GNNLayerParams(self.kind, index, params)
                for index in range(self.depth)]

    def encode_step(self, params, vitals, missing, text_vector, kg_sub,
                    timestep=None):
        '''Step embedding (``1 x output_dim``) and attention records.'''
        if not self.use_text:
            text_vector = np.zeros(self.dim)
        if not self.use_ft:
            vitals = np.asarray(vitals, dtype=np.float64)
            missing = np.asarray(missing, dtype=bool)
            if not np.all(np.isfinite(vitals[~missing])):
                raise InputError('Observed vital values must be finite: {0}'
                                 .format(vitals))
            row = np.where(missing, 0.0, vitals)
            if self.use_text:
                row = np.concatenate([row, text_vector])
            return constant(row), []
        tokens = feature_tokenize(vitals, missing, TokenizerParams(params))
        vsn = concat_rows([tokens, constant(text_vector)])
        graph = assemble_step_graph(
            vsn, self.vsn_edges, kg_sub if self.use_kg else EMPTY_SUBGRAPH)
        h, records = gnn_forward(graph, self.layers(params), timestep)
        return aggregate_nodes(h, self.aggregation), records
