"""Shared fixtures: continued fractions of the presets and a μ table"""

import pytest

from core.cf_core import cf_from_quotients
from core.moebius import sieve_mu
from core.processor import preset_quotients


@pytest.fixture(scope="session")
def golden():
    return cf_from_quotients([1] * 30, 256)


@pytest.fixture(scope="session")
def silver():
    return cf_from_quotients([2] * 30, 256)


@pytest.fixture(scope="session")
def liouville2():
    return cf_from_quotients(preset_quotients("liouville-2", 12), 512)


@pytest.fixture(scope="session")
def mu_small():
    return sieve_mu(10**5)


@pytest.fixture(scope="session")
def mu_large():
    return sieve_mu(1_100_000)
