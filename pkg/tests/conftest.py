from __future__ import annotations

import random

import pytest

from intercloud.netsim import LinkModel
from intercloud.protocol import USER, MigrationEngine, ProtocolConfig, prepare_engine

SMALL_BLOCK = 1024
FAST_KDF = 2**4


def make_engine(seed: int = 0, *, block_size: int = SMALL_BLOCK, file_size=None, payload=None, **kw) -> MigrationEngine:
    """A prepared engine with small blocks and a cheap KDF, for quick runs."""
    kw.setdefault("protocol", ProtocolConfig(kdf_cost=FAST_KDF))
    engine = MigrationEngine(seed=seed, block_size=block_size, **kw)
    return prepare_engine(engine, file_size=file_size, payload=payload)


def migrate(engine: MigrationEngine):
    sid = engine.key_setup(USER)
    return sid, engine.migrate(USER, sid, "f")


@pytest.fixture
def engine():
    return make_engine()


@pytest.fixture
def rng():
    return random.Random(1234)


@pytest.fixture
def lossless():
    return LinkModel()


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
