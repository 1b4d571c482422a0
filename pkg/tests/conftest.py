"""Shared fixtures and hypothesis strategies."""

import numpy as np
import pytest
from hypothesis import HealthCheck, settings, strategies as st

from crsphere.harmonics import random_function

settings.register_profile(
    "default", deadline=None, max_examples=25,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("default")


def blocks_upto(N, pred=lambda p, q: True):
    return [(p, q) for p in range(N + 1) for q in range(N + 1 - p) if pred(p, q)]


@st.composite
def exact_functions(draw, N=6, weight=0, pred=lambda p, q: True, max_blocks=3):
    """Random exact SphereFunction with a few blocks of degree <= N satisfying pred."""
    pool = blocks_upto(N, pred)
    support = draw(st.lists(st.sampled_from(pool), min_size=1, max_size=max_blocks, unique=True))
    seed = draw(st.integers(0, 2 ** 32 - 1))
    return random_function(np.random.default_rng(seed), support, weight=weight)


@st.composite
def float_functions(draw, N=6, weight=0, pred=lambda p, q: True, max_blocks=4):
    pool = blocks_upto(N, pred)
    support = draw(st.lists(st.sampled_from(pool), min_size=1, max_size=max_blocks, unique=True))
    seed = draw(st.integers(0, 2 ** 32 - 1))
    return random_function(np.random.default_rng(seed), support, weight=weight, exact=False)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
