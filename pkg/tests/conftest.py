import functools
import os

import pytest
from hypothesis import HealthCheck, settings

from vpki import crypto
from vpki.credentials import TrustTopology
from vpki.pki import build_hierarchy
from vpki.policy import SlotGrid
from vpki.simulator.run import run
from vpki.simulator.scenario import load_fixture
from vpki.vehicle import Vehicle
from vpki.wire import LocalEndpoint

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("quick", max_examples=50, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

GRID = SlotGrid(0, 600, 86400)
NOW = 7 * 86400 + 100


@functools.lru_cache(maxsize=None)
def fixture_run(name: str):
    """Run a bundled fixture once per session."""
    return run(load_fixture(name))


@functools.lru_cache(maxsize=None)
def _hierarchy(k: int, l: int, m: int, start: int):
    return build_hierarchy(TrustTopology(k, l, m), GRID, seed="tests", start=start)


class World:
    """A small seeded deployment: one hierarchy, its authorities, and local endpoints."""

    def __init__(self, k: int = 1, l: int = 1, m: int = 2, now: float = NOW) -> None:
        # services on a socket stamp requests with the wall clock, so they need now=time.time()
        self.now = now
        self.period = GRID.period_of(now)
        self.h = _hierarchy(k, l, m, int(now))
        self.ltca = self.h.ltca(self.h.ltca_ids[0])
        self.pcas = {pid: self.h.pca(pid) for pid in self.h.pca_ids}
        self.pca = self.pcas[self.h.pca_ids[0]]
        self.ra = self.h.ra(self.pcas, {self.ltca.authority_id: self.ltca})
        self.ltca_ep = LocalEndpoint(self.ltca.authority_id, self.ltca.handle)

    def pca_ep(self, pid: str | None = None) -> LocalEndpoint:
        pca = self.pcas[pid] if pid else self.pca
        return LocalEndpoint(pca.authority_id, pca.handle)

    def vehicle(self, vid: str = "V001", seed: int = 0) -> Vehicle:
        import random

        kp = crypto.generate_keypair(f"{vid}/{seed}")
        v = Vehicle(vid, kp, self.h.trust_store, self.h.grid, rng=random.Random(f"{vid}/{seed}"))
        v.enroll(self.ltca.register_vehicle(vid, kp.public_key, self.now))
        return v

    def refill(self, v: Vehicle, period: int | None = None, count: int = 10, pid: str | None = None, now: float | None = None):
        pid = pid or self.pca.authority_id
        period = self.period if period is None else period
        now = self.now if now is None else now
        return v.refill(period, pid, count, now, self.ltca_ep, self.pca_ep(pid))


@pytest.fixture
def world() -> World:
    return World()


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
