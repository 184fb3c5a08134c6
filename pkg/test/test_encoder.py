import numpy as np
import pytest
from kgicu.autodiff import (ParameterSet, constant, grad_check, matmul,
                            sum_rows)
from kgicu.encoder import (EMPTY_SUBGRAPH, AttentionRecord, GNNLayerParams,
                           HashingTextEncoder, StepEncoder, TokenizerParams,
                           aggregate_nodes, assemble_step_graph,
                           build_vsn_edges, encode_text, feature_tokenize,
                           gnn_forward, read_attention_records,
                           write_attention_records)
from kgicu.errors import (ConfigurationError, ContractError, InputError,
                          ShapeError)
from kgicu.knowledge import KGSubgraph

TOLERANCE = 1e-4


def _tokenizer(n_vs=3, dim=4, seed=0):
    params = ParameterSet()
    TokenizerParams.create(params, n_vs, dim, np.random.RandomState(seed))
    return params, TokenizerParams(params)


def _kg_sub(k, dim, edges=(), seed=1):
    if k == 0:
        return EMPTY_SUBGRAPH
    rng = np.random.RandomState(seed)
    return KGSubgraph(['C{0}'.format(i) for i in range(k)], edges,
                      rng.normal(size=(k, dim)))


def test_feature_tokenize_rows():
    params, tokenizer = _tokenizer()
    tokenizer.bias.values[...] = np.random.RandomState(5).normal(size=(3, 4))
    x = np.array([1.5, np.nan, -2.0])
    missing = np.array([False, True, False])
    rows = feature_tokenize(x, missing, tokenizer).values
    w, b, m = (tokenizer.weight.values, tokenizer.bias.values,
               tokenizer.missing.values)
    np.testing.assert_allclose(rows[0], 1.5 * w[0] + b[0])
    np.testing.assert_allclose(rows[1], m[1])
    np.testing.assert_allclose(rows[2], -2.0 * w[2] + b[2])


def test_feature_tokenize_errors():
    params, tokenizer = _tokenizer()
    with pytest.raises(ShapeError):
        feature_tokenize([1.0, 2.0], [False, False], tokenizer)
    with pytest.raises(InputError):
        feature_tokenize([1.0, np.nan, 2.0], [False, False, False], tokenizer)


def test_encode_text():
    np.testing.assert_array_equal(encode_text([], 8), np.zeros(8))
    np.testing.assert_array_equal(encode_text(['', '  '], 8), np.zeros(8))
    one, other = encode_text(['pressors'], 8), encode_text(['started'], 8)
    assert np.abs(one).sum() == 1.0
    np.testing.assert_allclose(encode_text(['Pressors started'], 8),
                               (one + other) / np.sqrt(2))
    np.testing.assert_array_equal(encode_text(['pressors', 'started'], 8),
                                  encode_text(['pressors started'], 8))
    np.testing.assert_array_equal(HashingTextEncoder(8)(['PRESSORS']), one)


def test_build_vsn_edges():
    full = build_vsn_edges(4)
    assert len(full) == 6 + 4
    assert (0, 4) in full and (2, 3) in full
    grouped = build_vsn_edges(4, 'grouped', {0: 'a', 1: 'a', 2: 'b', 3: 'b'})
    assert grouped == set([(0, 1), (2, 3), (0, 4), (1, 4), (2, 4), (3, 4)])
    with pytest.raises(ConfigurationError):
        build_vsn_edges(4, 'grouped', {0: 'a'})
    with pytest.raises(ConfigurationError):
        build_vsn_edges(4, 'ring')


def test_step_graph_edge_count():
    rng = np.random.RandomState(0)
    for _ in range(500):
        n_vs, k, dim = rng.randint(1, 9), rng.randint(0, 11), 3
        kg_edges = sorted(set((i, j) for i in range(k) for j in range(i + 1, k)
                              if rng.uniform() < 0.5))
        vsn_edges = build_vsn_edges(n_vs)
        graph = assemble_step_graph(constant(rng.normal(size=(n_vs + 1, dim))),
                                    vsn_edges, _kg_sub(k, dim, kg_edges))
        assert graph.num_nodes == n_vs + 1 + k
        assert len(graph.edges) == (len(vsn_edges) + len(kg_edges)
                                    + (n_vs + 1) * k)
        assert all(i < j for i, j in graph.edges)


def test_step_graph_roles_and_layout():
    sub = _kg_sub(2, 3, [(0, 1)])
    graph = assemble_step_graph(constant(np.zeros((3, 3))),
                                build_vsn_edges(2), sub)
    assert graph.node_roles == ['vital:0', 'vital:1', 'text', 'kg:C0', 'kg:C1']
    assert (3, 4) in graph.edges
    np.testing.assert_array_equal(graph.node_features.values[3:],
                                  sub.features)
    a = graph.adjacency()
    assert (a == a.T).all()
    assert a[2].sum() == 2 + 2


def test_step_graph_feature_mismatch():
    with pytest.raises(ShapeError):
        assemble_step_graph(constant(np.zeros((3, 3))), build_vsn_edges(2),
                            _kg_sub(2, 4))


def _graph(n_vs=4, k=2, dim=4, connectivity='full', groups=None, seed=0):
    rng = np.random.RandomState(seed)
    return assemble_step_graph(constant(rng.normal(size=(n_vs + 1, dim))),
                               build_vsn_edges(n_vs, connectivity, groups),
                               _kg_sub(k, dim, [(0, 1)] if k > 1 else []))


def _layers(kind, depth, dim, seed=0):
    params = ParameterSet()
    rng = np.random.RandomState(seed)
    for index in range(depth):
        GNNLayerParams.create(params, kind, index, dim, rng)
    return params, [GNNLayerParams(kind, i, params) for i in range(depth)]


def test_gnn_without_layers_is_identity():
    graph = _graph()
    h, records = gnn_forward(graph, [])
    assert h is graph.node_features
    assert records == []


@pytest.mark.parametrize('kind', ['gcn', 'sage', 'attention'])
def test_gnn_output_shape(kind):
    graph = _graph()
    params, layers = _layers(kind, 2, 4)
    h, records = gnn_forward(graph, layers, timestep=3)
    assert h.shape == [graph.num_nodes, 4]
    assert len(records) == (2 if kind == 'attention' else 0)


def test_sage_weight_shape():
    params, layers = _layers('sage', 1, 4)
    assert params['gnn.0.weight'].shape == [8, 4]
    params, layers = _layers('attention', 1, 4)
    assert params['gnn.0.attention'].shape == [8, 1]
    with pytest.raises(ConfigurationError):
        GNNLayerParams.create(ParameterSet(), 'gin', 0, 4,
                              np.random.RandomState(0))


def test_attention_rows_are_distributions():
    groups = {0: 'a', 1: 'a', 2: 'b', 3: 'b'}
    graph = _graph(connectivity='grouped', groups=groups, k=0)
    params, layers = _layers('attention', 2, 4)
    h, records = gnn_forward(graph, layers, timestep=7)
    closed = graph.adjacency() + np.eye(graph.num_nodes)
    for position, record in enumerate(records):
        assert record.layer == position
        assert record.timestep == 7
        assert record.node_roles == graph.node_roles
        np.testing.assert_allclose(record.alpha.sum(axis=1), 1.0)
        assert (record.alpha >= 0).all()
        assert (record.alpha[closed == 0] == 0).all()
    # vitals of different groups do not attend to each other
    assert records[0].alpha[0, 2] == 0.0


def test_attention_records_file(tmpdir):
    params, layers = _layers('attention', 1, 4)
    h, records = gnn_forward(_graph(), layers, timestep=0)
    path = str(tmpdir.join('heatmaps.jsonl'))
    write_attention_records(path, records)
    loaded = read_attention_records(path)
    assert len(loaded) == 1
    assert loaded[0].node_roles == records[0].node_roles
    np.testing.assert_allclose(loaded[0].alpha, records[0].alpha)


@pytest.mark.parametrize('kind', ['gcn', 'sage', 'attention'])
@pytest.mark.parametrize('aggregation', ['sum', 'mean', 'max'])
def test_grad_check_step_encoder(kind, aggregation):
    encoder = StepEncoder(n_vs=3, dim=4, depth=2, kind=kind,
                          aggregation=aggregation)
    params = ParameterSet()
    rng = np.random.RandomState(2)
    encoder.init_params(params, rng)
    params['tokenizer.bias'].values[...] = 0.1
    # positive biases keep relu inputs away from the kink at 0
    for index in range(2):
        bias = params['gnn.{0}.bias'.format(index)]
        bias.values[...] = rng.uniform(0.2, 0.5, size=bias.values.shape)
    vitals = np.array([0.7, np.nan, -1.3])
    missing = np.array([False, True, False])
    text = np.random.RandomState(3).normal(size=4)
    sub = _kg_sub(2, 4, [(0, 1)])
    weights = constant(np.random.RandomState(4).uniform(0.5, 1.5,
                                                        size=(4, 1)))

    def loss(p):
        step, _ = encoder.encode_step(p, vitals, missing, text, sub)
        return matmul(step, weights)
    step, _ = encoder.encode_step(params, vitals, missing, text, sub)
    assert np.abs(step.values).max() > 0
    assert grad_check(loss, params) < TOLERANCE


def test_aggregate_nodes():
    h = constant([[1.0, -2.0], [3.0, 4.0], [-1.0, 0.0]])
    np.testing.assert_array_equal(aggregate_nodes(h, 'sum').values,
                                  [[3.0, 2.0]])
    np.testing.assert_array_equal(aggregate_nodes(h, 'mean').values,
                                  [[1.0, 2.0 / 3]])
    np.testing.assert_array_equal(aggregate_nodes(h, 'max').values,
                                  [[3.0, 4.0]])
    with pytest.raises(ConfigurationError):
        aggregate_nodes(h, 'median')
    with pytest.raises(ContractError):
        aggregate_nodes(None)


def test_aggregation_is_permutation_invariant():
    rng = np.random.RandomState(0)
    values = rng.normal(size=(6, 3))
    order = rng.permutation(6)
    for mode in ('sum', 'mean', 'max'):
        np.testing.assert_allclose(
            aggregate_nodes(constant(values), mode).values,
            aggregate_nodes(constant(values[order]), mode).values)


def test_step_encoder_without_tokenizer():
    encoder = StepEncoder(n_vs=3, dim=4, use_ft=False, use_gnn=False,
                          use_kg=False)
    params = ParameterSet()
    encoder.init_params(params, np.random.RandomState(0))
    assert len(params) == 0
    assert encoder.depth == 0
    assert encoder.output_dim == 3 + 4
    text = np.arange(4.0)
    step, records = encoder.encode_step(params, [1.0, np.nan, 2.0],
                                        [False, True, False], text,
                                        EMPTY_SUBGRAPH)
    np.testing.assert_array_equal(step.values, [[1.0, 0.0, 2.0, 0.0, 1.0,
                                                 2.0, 3.0]])
    assert records == []

    vitals_only = StepEncoder(n_vs=3, dim=4, use_ft=False, use_gnn=False,
                              use_text=False, use_kg=False)
    step, _ = vitals_only.encode_step(params, [1.0, 5.0, 2.0],
                                      [False, True, False], None,
                                      EMPTY_SUBGRAPH)
    np.testing.assert_array_equal(step.values, [[1.0, 0.0, 2.0]])


def test_step_encoder_ignores_kg_when_disabled():
    encoder = StepEncoder(n_vs=2, dim=4, depth=1, kind='attention',
                          use_kg=False)
    params = ParameterSet()
    encoder.init_params(params, np.random.RandomState(0))
    step, records = encoder.encode_step(params, [0.5, 1.0], [False, False],
                                        np.zeros(4), _kg_sub(3, 4), 0)
    assert step.shape == [1, 4]
    assert records[0].node_roles == ['vital:0', 'vital:1', 'text']


def test_step_encoder_tokenizer_only():
    encoder = StepEncoder(n_vs=2, dim=4, use_gnn=False, use_text=False,
                          use_kg=False)
    params = ParameterSet()
    encoder.init_params(params, np.random.RandomState(0))
    assert encoder.layers(params) == []
    step, _ = encoder.encode_step(params, [0.5, 1.0], [False, False],
                                  None, EMPTY_SUBGRAPH)
    tokens = feature_tokenize([0.5, 1.0], [False, False],
                              TokenizerParams(params))
    np.testing.assert_allclose(step.values, sum_rows(tokens).values)


def test_step_encoder_rejects_unknown_options():
    with pytest.raises(ConfigurationError):
        StepEncoder(n_vs=2, kind='gin')
    with pytest.raises(ConfigurationError):
        StepEncoder(n_vs=2, aggregation='median')


def test_attention_record_json():
    record = AttentionRecord(1, 4, np.eye(2), ['vital:0', 'text'])
    loaded = AttentionRecord.from_json(record.to_json())
    assert loaded.layer == 1 and loaded.timestep == 4
    np.testing.assert_array_equal(loaded.alpha, np.eye(2))
