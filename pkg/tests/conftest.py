import dataclasses
import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from rislab.channel import ChannelSet, ScenarioConfig  # noqa: E402


def random_channel_set(rng, K, N_t, N_r, M):
    def cn(*shape):
        return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) \
            / math.sqrt(2)
    return ChannelSet(cn(K, N_r, N_t), cn(M, N_t), cn(K, N_r, M))


def random_precoder(rng, N_t, K, p_max=1.0):
    F = rng.standard_normal((N_t, K)) + 1j * rng.standard_normal((N_t, K))
    return F * math.sqrt(p_max / np.sum(np.abs(F) ** 2))


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


@pytest.fixture
def unit_scenario():
    """Scenario without large-scale attenuation."""
    return lambda **kw: dataclasses.replace(
        ScenarioConfig(pl_direct_db=0.0, pl_bs_ris_db=0.0, pl_ris_user_db=0.0),
        **kw)
