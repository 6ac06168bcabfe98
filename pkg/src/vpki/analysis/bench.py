"""Wall-clock issuance benchmark against live TCP services on localhost.

One repetition is a full acquisition by a registered vehicle: sealed token
request to the LTCA, then a sealed pseudonym request for ``count`` fresh
keys to the PCA (directly, or through a shuffle proxy with a batch size of
one). Client-side key generation and envelope handling are included.
"""

from __future__ import annotations

import math
import statistics
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Iterator, Optional

from .. import crypto
from ..credentials import TrustTopology
from ..errors import VpkiError
from ..ltca import LTCA
from ..pca import PCA, ThreadedShuffleProxy
from ..pki import Hierarchy, build_hierarchy
from ..policy import SlotGrid
from ..vehicle import Vehicle
from ..wire import FrameServer, RemoteEndpoint

# comparison band for issuing 100 pseudonyms (ms)
REFERENCE_MS = {"VeSPA": 817, "SEROSA": 650, "PUCA": 1000, "SR-VPKI": 260}
SLOT = 60


@dataclass
class BenchResult:
    count: int
    mode: str
    latencies_ms: list[float] = field(default_factory=list)

    @property
    def median(self) -> float:
        return statistics.median(self.latencies_ms)

    @property
    def p95(self) -> float:
        xs = sorted(self.latencies_ms)
        return xs[max(0, math.ceil(0.95 * len(xs)) - 1)]  # nearest rank

    def to_dict(self) -> dict[str, Any]:
        return {
            "count": self.count,
            "mode": self.mode,
            "reps": len(self.latencies_ms),
            "median_ms": round(self.median, 3),
            "p95_ms": round(self.p95, 3),
            "min_ms": round(min(self.latencies_ms), 3),
            "max_ms": round(max(self.latencies_ms), 3),
            "latencies_ms": [round(x, 3) for x in self.latencies_ms],
            "reference_ms": REFERENCE_MS,
        }


@dataclass
class LiveServices:
    hierarchy: Hierarchy
    servers: dict[str, FrameServer]
    ltca: LTCA
    pca: PCA

    def endpoint(self, name: str) -> RemoteEndpoint:
        return RemoteEndpoint(name, "127.0.0.1", self.servers[name].port)


@contextmanager
def live_services(count: int, mode: str = "token", hierarchy: Optional[Hierarchy] = None) -> Iterator[LiveServices]:
    """LTCA-1 and PCA-1 (and ``proxy`` in proxy mode) on ephemeral ports."""
    if mode not in ("token", "proxy"):
        raise VpkiError("invalid-request", f"unknown mode {mode!r}")
    h = hierarchy or build_hierarchy(
        TrustTopology(1, 1, 1),
        SlotGrid(0, SLOT, SLOT * max(count, 1)),
        start=int(time.time()),
    )
    ltca = h.ltca(h.ltca_ids[0])
    pca = h.pca(h.pca_ids[0])
    servers = {"LTCA": FrameServer(ltca.handle).start(), "PCA": FrameServer(pca.handle).start()}
    if mode == "proxy":
        proxy = ThreadedShuffleProxy(pca.handle, 1)
        servers["proxy"] = FrameServer(proxy.exchange).start()
    try:
        yield LiveServices(h, servers, ltca, pca)
    finally:
        for s in servers.values():
            s.stop()


def bench_issuance(count: int = 100, mode: str = "token", reps: int = 10, warmup: int = 1) -> BenchResult:
    """End-to-end acquisition latency, one fresh period per repetition."""
    if count < 0 or reps < 1:
        raise VpkiError("invalid-request", "count must be >= 0 and reps >= 1")
    result = BenchResult(count, mode)
    with live_services(count, mode) as svc:
        h = svc.hierarchy
        ltca_id, pca_id = h.ltca_ids[0], h.pca_ids[0]
        keypair = crypto.generate_keypair()
        vehicle = Vehicle("BENCH-1", keypair, h.trust_store, h.grid)
        vehicle.enroll(svc.ltca.register_vehicle("BENCH-1", keypair.public_key, time.time()))
        ltca_ep = svc.endpoint("LTCA")
        pca_ep = svc.endpoint("proxy" if mode == "proxy" else "PCA")
        pca_ep.authority_id = pca_id
        ltca_ep.authority_id = ltca_id
        period = h.grid.period_of(time.time())
        try:
            for i in range(warmup + reps):
                t0 = time.perf_counter()
                now = time.time()
                if count:
                    vehicle.refill(period + i, pca_id, count, now, ltca_ep, pca_ep)
                else:
                    acq = vehicle.start_acquisition(period + i, pca_id, 0)
                    acq.on_token_response(ltca_ep.exchange(acq.token_request(h.trust_store.public_key(ltca_id), now), now))
                elapsed = (time.perf_counter() - t0) * 1000
                if i >= warmup:
                    result.latencies_ms.append(elapsed)
        finally:
            ltca_ep.close()
            pca_ep.close()
    return result
