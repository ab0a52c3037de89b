"""Shared fixtures for the test suite."""

import numpy as np
import pytest

from ultramodem.core import link_preset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def endoscopy_cfg():
    return link_preset("endoscopy")


def random_payload(n_bytes: int, seed: int = 0) -> bytes:
    r = np.random.default_rng(seed)
    return r.integers(0, 256, n_bytes, dtype=np.uint8).tobytes()
