"""Wall-clock beacon load: can every vehicle sign and every neighbor verify in time?

All vehicles share one process and one thread. Each vehicle beacons at a
fixed rate with its own phase; a beacon is encoded once, then each vehicle
in radio range decodes and fully verifies its own copy. The deadline for a
beacon is the sender's next tick: if the last neighbor finishes verifying
after that, the beacon counts as missed. Receivers keep their own chain
memo (as an on-board unit would) but no signature results are shared.
"""

from __future__ import annotations

import gc
import heapq
import random
import time
from dataclasses import dataclass, field
from typing import Any, Optional

from .. import crypto
from ..codec import decode
from ..credentials import TrustTopology
from ..errors import Rejected, VpkiError
from ..pki import build_hierarchy
from ..policy import SlotGrid
from ..vehicle import Vehicle
from ..wire import LocalEndpoint
from .engine import RandomWaypoint

SLOT = 600
PERIOD = 3600


@dataclass
class LiveConfig:
    vehicles: int = 50
    rate: float = 10.0
    duration: float = 60.0
    radio_range: Optional[float] = 250.0  # None: every vehicle hears every other
    plane: tuple[float, float] = (1500.0, 1500.0)
    speed: tuple[float, float] = (8.0, 30.0)
    seed: int = 1


@dataclass
class LiveReport:
    config: LiveConfig
    beacons: int = 0
    verifications: int = 0
    rejected: int = 0
    missed_deadlines: int = 0
    no_pseudonym: int = 0
    max_lateness_ms: float = 0.0
    max_latency_ms: float = 0.0  # tick to last verification
    busy_seconds: float = 0.0
    elapsed: float = 0.0
    neighbor_counts: list[int] = field(default_factory=list, repr=False)

    @property
    def mean_neighbors(self) -> float:
        return sum(self.neighbor_counts) / len(self.neighbor_counts) if self.neighbor_counts else 0.0

    @property
    def utilization(self) -> float:
        return self.busy_seconds / self.elapsed if self.elapsed else 0.0

    def to_dict(self) -> dict[str, Any]:
        c = self.config
        return {
            "vehicles": c.vehicles,
            "rate_hz": c.rate,
            "duration_s": c.duration,
            "radio_range_m": c.radio_range,
            "plane_m": list(c.plane),
            "beacons": self.beacons,
            "verifications": self.verifications,
            "rejected": self.rejected,
            "no_valid_pseudonym": self.no_pseudonym,
            "missed_deadlines": self.missed_deadlines,
            "max_lateness_ms": round(self.max_lateness_ms, 3),
            "max_latency_ms": round(self.max_latency_ms, 3),
            "mean_neighbors": round(self.mean_neighbors, 3),
            "utilization": round(self.utilization, 4),
            "elapsed_s": round(self.elapsed, 3),
        }


def _fleet(config: LiveConfig, now: float) -> list[Vehicle]:
    """Registered vehicles holding pseudonyms for this period and the next."""
    h = build_hierarchy(TrustTopology(1, 1, 1), SlotGrid(0, SLOT, PERIOD), seed=config.seed, start=int(now))
    ltca, pca = h.ltca(h.ltca_ids[0]), h.pca(h.pca_ids[0])
    ltca_ep = LocalEndpoint(ltca.authority_id, ltca.handle)
    pca_ep = LocalEndpoint(pca.authority_id, pca.handle)
    period = h.grid.period_of(now)
    fleet = []
    for i in range(config.vehicles):
        vid = f"V{i + 1:03d}"
        kp = crypto.generate_keypair()
        v = Vehicle(vid, kp, h.trust_store, h.grid)
        v.enroll(ltca.register_vehicle(vid, kp.public_key, now))
        for p in (period, period + 1):
            v.refill(p, pca.authority_id, h.grid.slots_per_period, now, ltca_ep, pca_ep)
        fleet.append(v)
    return fleet


def run_live(config: LiveConfig, clock=time.monotonic, wall=time.time) -> LiveReport:
    fleet = _fleet(config, wall())
    rng = random.Random(config.seed)
    interval = 1.0 / config.rate
    report = LiveReport(config)
    t0 = clock()
    mobility = [RandomWaypoint(config.plane, config.speed, random.Random(f"{config.seed}/{i}"), 0.0) for i in range(len(fleet))]
    # (due, vehicle index)
    heap = [(t0 + rng.uniform(0, interval), i) for i in range(len(fleet))]
    heapq.heapify(heap)
    end = t0 + config.duration
    r2 = None if config.radio_range is None else config.radio_range ** 2
    payload = bytes(32)

    gc_was_enabled = gc.isenabled()
    gc.disable()  # collected between beacons instead, so a pause never lands inside one
    try:
        while heap:
            due, i = heapq.heappop(heap)
            if due >= end:
                break
            wait = due - clock()
            if wait > 0:
                if wait > 0.02:
                    gc.collect(0)
                    wait = due - clock()
                if wait > 0:
                    time.sleep(wait)
            started = clock()
            sim_t = started - t0
            sender = fleet[i]
            pos = mobility[i].position(sim_t)
            try:
                data = sender.sign_beacon(payload, pos, wall()).encode()
            except VpkiError:
                report.no_pseudonym += 1
                heapq.heappush(heap, (due + interval, i))
                continue
            report.beacons += 1
            neighbors = 0
            for j, receiver in enumerate(fleet):
                if j == i:
                    continue
                if r2 is not None:
                    x, y = mobility[j].position(sim_t)
                    if (x - pos[0]) ** 2 + (y - pos[1]) ** 2 > r2:
                        continue
                neighbors += 1
                try:
                    receiver.verify_beacon(decode(data), wall())  # type: ignore[arg-type]
                except Rejected:
                    report.rejected += 1
                report.verifications += 1
            done = clock()
            report.neighbor_counts.append(neighbors)
            report.busy_seconds += done - started
            report.max_latency_ms = max(report.max_latency_ms, (done - due) * 1000)
            lateness = done - (due + interval)
            if lateness > 0:
                report.missed_deadlines += 1
                report.max_lateness_ms = max(report.max_lateness_ms, lateness * 1000)
            heapq.heappush(heap, (due + interval, i))
    finally:
        if gc_was_enabled:
            gc.enable()
    report.elapsed = clock() - t0
    return report
