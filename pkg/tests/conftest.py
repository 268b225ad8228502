import random

import pytest

from amiagg.groups import GroupParams
from amiagg.vector import CodecConfig


@pytest.fixture(scope="session")
def tiny():
    """Smallest toy group — exhaustive checks over all scalars are feasible."""
    return GroupParams.toy(order=251)


@pytest.fixture(scope="session")
def toy():
    """Default toy group: large enough to sum full 16-bit fields."""
    return GroupParams.toy()


@pytest.fixture(scope="session")
def codec():
    return CodecConfig()


@pytest.fixture(scope="session")
def probe_codec():
    """Narrow fields so probes/exhaustive sweeps stay desk-scale."""
    return CodecConfig(count_bits=3, consumption_bits=3, max_meters=7)


@pytest.fixture
def rng():
    return random.Random(0xA31)
