import pytest

from hebatch.backends import NaiveBackend, ParallelBackend
from hebatch.paillier import default_rng, keygen, keypair_from_primes


@pytest.fixture
def tiny_keys():
    """Deterministic 6-bit key (n=35) for exhaustive / golden-value tests."""
    return keypair_from_primes(5, 7)


@pytest.fixture(scope="session")
def small_keys():
    """128-bit seeded test key: big enough for real mantissas, fast."""
    return keygen(128, default_rng(1234), allow_insecure=True)


@pytest.fixture(scope="session")
def mid_keys():
    """512-bit seeded test key for protocol tests."""
    return keygen(512, default_rng(99), allow_insecure=True)


@pytest.fixture(scope="session")
def keys_1024():
    """Full-size key shared by the slower correctness suites."""
    return keygen(1024, default_rng(7))


@pytest.fixture
def naive():
    return NaiveBackend()


@pytest.fixture
def parallel():
    backend = ParallelBackend(4)
    yield backend
    backend.close()
