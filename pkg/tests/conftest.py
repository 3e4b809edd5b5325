import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from voicepath.audio_io import load_corpus, synth_corpus

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """40 one-second clips, half nodule, two clips per speaker."""
    root = tmp_path_factory.mktemp("corpus40")
    manifest = synth_corpus(root, 40, seed=11)
    return root, manifest


@pytest.fixture(scope="session")
def small_records(small_corpus):
    from voicepath.pipeline import extract_records

    root, manifest = small_corpus
    return extract_records(load_corpus(root, manifest))
