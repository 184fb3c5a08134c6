# This file makes pytest running just by running "pytest"
import pytest


def pytest_configure(config):
    config.addinivalue_line(
        'markers', 'slow: trains models on synthetic data')


@pytest.fixture
def small_spec():
    from kgicu.synthetic import SyntheticSpec
    return SyntheticSpec(n_episodes=40, n_vs=3, min_length=8, max_length=10,
                         onset_window=8, note_rate=0.4, noise=0.0,
                         vocab_size=10, seed=0)


@pytest.fixture
def small_config():
    from kgicu.config import TrainConfig
    return TrainConfig(task='decompensation', dim=4, hidden_size=4,
                       gnn_depth=1, layer_kind='attention', max_kg_nodes=5,
                       mortality_window=8, epochs=1, batch_size=4,
                       learning_rate=0.01)


@pytest.fixture
def small_dataset(tmpdir, small_spec):
    from kgicu.data import load_dataset, write_dataset
    from kgicu.synthetic import generate_synthetic
    episodes, vocabulary, edges = generate_synthetic(small_spec)
    directory = str(tmpdir.join('synthetic'))
    write_dataset(directory, episodes, vocabulary, edges)
    return load_dataset(directory)


@pytest.fixture
def planted(tmpdir):
    '''Write and load synthetic sets; also returns the latent events.'''
    from kgicu.data import load_dataset, write_dataset
    from kgicu.synthetic import SyntheticSpec, generate_synthetic

    def make(**values):
        spec = SyntheticSpec(**values)
        episodes, vocabulary, edges, latents = generate_synthetic(
            spec, with_latents=True)
        directory = str(tmpdir.join('{0}-{1}'.format(spec.rule, spec.seed)))
        write_dataset(directory, episodes, vocabulary, edges)
        return load_dataset(directory), latents
    return make
