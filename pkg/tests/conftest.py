import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dmcanc import compensation, dsp, plant
from dmcanc.harness import ExperimentConfig

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_cfg():
    return ExperimentConfig.ci()


@pytest.fixture(scope="session")
def small_plant(small_cfg):
    c = small_cfg
    return plant.synthesize_plant(c.n_nodes, c.self_taps, c.cross_taps, c.primary_taps,
                                  c.path_band, c.fs, c.plant_seed, decay=c.path_decay,
                                  cross_gain=c.cross_gain, cross_delay=c.cross_delay,
                                  primary_delay=c.primary_delay)


@pytest.fixture(scope="session")
def tiny_constructed():
    """Three nodes, short paths, cross paths exactly s_kk * c_true."""
    return plant.constructed_plant(3, 24, 32, 32, 8, (200.0, 3000.0), 8000.0, seed=3,
                                   cross_delay=(1, 4), primary_delay=(2, 6),
                                   prototype_taps=9)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
