import numpy as np
import pytest

from fluidsar.channel import Region, sample_channel
from fluidsar.solver import SolverConfig

NOISE_W = 10.0 ** (-13.5)  # -105 dBm
WAVELENGTH = 0.01


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


@pytest.fixture
def region():
    return Region(half_width=1.0, wavelength=WAVELENGTH)


@pytest.fixture
def paper_channel():
    """One M=K=4, L=15 realization at the reference noise level."""
    return sample_channel(11, 4, 4, 15, NOISE_W)


def fast_config(**overrides):
    """Solver settings tuned for test runtime; paper thresholds unless overridden."""
    defaults = dict(mu0=1e-2, a=0.5, max_outer=60, max_inner=8, max_sca_iter=8,
                    eps_inner_rel=1e-3, eps_position_rel=1e-3)
    defaults.update(overrides)
    return SolverConfig(**defaults)


def random_complex(rng, shape, scale=1.0):
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
