import random

import pytest

from eeks import directory as kd
from eeks.schnorr import TEST_PARAMS, keygen, production_params
from eeks.session import register


class World:
    """A root, one local node per side, and two registered parties."""

    def __init__(self, params, seed=0):
        self.params = params
        self.rng = random.Random(seed)
        self.root = kd.DirectoryNode("root", "eeks_root", params=params)
        self.local_a = kd.DirectoryNode("local", "eeks_a", upstream=self.root)
        self.local_b = kd.DirectoryNode("local", "eeks_b", upstream=self.root)
        self.alice_keys = keygen(params, self.rng)
        self.bob_keys = keygen(params, self.rng)
        self.alice = register("alice@a.example", self.alice_keys, self.local_a)
        self.bob = register("bob@b.example", self.bob_keys, self.local_b)
        self.sync()

    def sync(self, now=0):
        kd.sync(self.local_a, self.root, now)
        kd.sync(self.local_b, self.root, now)


@pytest.fixture
def world():
    return World(production_params())


@pytest.fixture
def small_world():
    return World(TEST_PARAMS)


# acceptance lines collected by tests/test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
