import numpy as np
import pytest

from osfsl.data import SyntheticSpec, synth_gaussian_features
from osfsl.episodes import EpisodeSpec, preset_spec, sample_episode


@pytest.fixture(scope="session")
def separable_pool():
    """Well-separated 16-d pool: every inlier class has 20+ samples."""
    return synth_gaussian_features(
        SyntheticSpec(num_classes=12, samples_per_class=30, dim=16,
                      center_scale=6.0, within_class_sigma=1.0, seed=101)
    )


@pytest.fixture(scope="session")
def hard_pool():
    """Off-ceiling pool where methods make mistakes (center/sigma ratio 2.5)."""
    return synth_gaussian_features(
        SyntheticSpec(num_classes=20, samples_per_class=60, dim=16,
                      center_scale=2.5, within_class_sigma=1.0, seed=202)
    )


@pytest.fixture(scope="session")
def tiny_episode(separable_pool):
    """2-way 1-shot episode with a small mixed query."""
    spec = EpisodeSpec(n_in=2, n_out_classes=2, k_shot=1,
                       k_in_query=3, k_out_query=3, seed=7)
    return sample_episode(separable_pool, spec)


@pytest.fixture(scope="session")
def balanced_episode(separable_pool):
    return sample_episode(separable_pool, preset_spec("balanced", seed=99))


@pytest.fixture()
def rng():
    return np.random.default_rng(4242)
