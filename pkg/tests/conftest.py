"""Shared fixtures: frequencies, models and small helpers."""

import numpy as np
import pytest

from kamtori import FourierMap, HamiltonianModel, TorusEmbedding

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@pytest.fixture
def golden_omega():
    return np.array([GOLDEN])


@pytest.fixture
def pendulum():
    return HamiltonianModel.pendulum(1e-3)


@pytest.fixture
def rotator():
    return HamiltonianModel.free_rotator(1)


@pytest.fixture
def circle_torus():
    return TorusEmbedding.circle(GOLDEN, trunc_order=64)


def random_trig(rng, n, order, range_shape=()):
    """Random real trigonometric polynomial with |k|_inf <= order."""
    modes = {}
    for idx in np.ndindex(*((2 * order + 1,) * n)):
        k = tuple(i - order for i in idx)
        if not any(k):
            modes[k] = rng.standard_normal(range_shape) + 0j
            continue
        first = next(v for v in k if v != 0)
        if first < 0:
            continue
        modes[k] = rng.standard_normal(range_shape) + 1j * rng.standard_normal(
            range_shape
        )
    return FourierMap(n, range_shape, modes, trunc_order=order)
