import pytest

from contrastiq.synth import generate_sources, make_dataset


@pytest.fixture(scope="session")
def gamma_dataset(tmp_path_factory):
    """Small gamma-only dataset: 8 contents, 32x32, 5 severity levels."""
    out = tmp_path_factory.mktemp("gamma_data")
    sources = generate_sources(8, 32, 32, seed=5)
    return make_dataset(sources, str(out), kinds=("gamma",),
                        levels=(0.0, 0.12, 0.25, 0.45, 0.7))


@pytest.fixture(scope="session")
def mixed_dataset(tmp_path_factory):
    """Both distortion families: 12 contents, 48x48, default levels."""
    out = tmp_path_factory.mktemp("mixed_data")
    sources = generate_sources(12, 48, 48, seed=7)
    return make_dataset(sources, str(out))
