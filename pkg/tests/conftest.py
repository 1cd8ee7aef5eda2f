import numpy as np
import pytest

from risuplink import default_config, synthesize_channels


def tiny_config(**overrides):
    """Small fast scenario for unit tests: K=2, N=2, M=4, unit-ish scales.

    The antenna offset shrinks with the array so it stays inside the (much
    smaller) Rayleigh distance of a 2x2 aperture.
    """
    base = dict(
        num_users=2, num_subcarriers=2, ris_rows=2, ris_cols=2,
        total_bandwidth=2e6, min_rate=0.0, antenna_offset=0.05,
    )
    base.update(overrides)
    return default_config(**base)


@pytest.fixture(scope="session")
def default_cfg():
    return default_config()


@pytest.fixture(scope="session")
def default_real(default_cfg):
    return synthesize_channels(default_cfg, seed=1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_psd(rng, m, rank=None):
    """Random Hermitian PSD matrix with O(1) trace."""
    rank = rank or m
    a = (rng.standard_normal((m, rank)) + 1j * rng.standard_normal((m, rank)))
    c = a @ a.conj().T / (2 * rank)
    return (c + c.conj().T) / 2
