"""Virtual clock, event queue, channel and mobility models."""

from __future__ import annotations

import heapq
import itertools
import math
import random
from typing import Any, Callable

from .scenario import Channel


class EventQueue:
    """Time-ordered callbacks; ties run in scheduling order."""

    def __init__(self, start: float = 0.0) -> None:
        self.now = start
        self._heap: list[tuple[float, int, Callable[..., Any], tuple]] = []
        self._seq = itertools.count()
        self.processed = 0

    def __len__(self) -> int:
        return len(self._heap)

    def at(self, t: float, fn: Callable[..., Any], *args: Any) -> None:
        if t < self.now:
            t = self.now
        heapq.heappush(self._heap, (t, next(self._seq), fn, args))

    def after(self, delay: float, fn: Callable[..., Any], *args: Any) -> None:
        self.at(self.now + delay, fn, *args)

    def run(self, until: float) -> None:
        heap = self._heap
        while heap and heap[0][0] <= until:
            t, _, fn, args = heapq.heappop(heap)
            self.now = t
            fn(*args)
            self.processed += 1
        self.now = max(self.now, until)


class ChannelModel:
    """Latency and loss for the two kinds of links.

    Vehicle-authority traffic is reliable: each loss costs one retransmission
    delay. V2V broadcasts are simply dropped.
    """

    def __init__(self, config: Channel, rng: random.Random) -> None:
        self.config = config
        self.rng = rng

    def v2a_delay(self) -> float:
        c = self.config
        delay = self.rng.uniform(*c.v2a_latency)
        while c.loss and self.rng.random() < c.loss:
            delay += c.retransmit + self.rng.uniform(*c.v2a_latency)
        return delay

    def v2v_delay(self) -> float:
        return self.rng.uniform(*self.config.v2v_latency)

    def dropped(self) -> bool:
        return bool(self.config.loss) and self.rng.random() < self.config.loss


class RandomWaypoint:
    """Random-waypoint mobility on a rectangle, queried at non-decreasing times."""

    def __init__(self, plane: tuple[float, float], speed: tuple[float, float], rng: random.Random, t0: float) -> None:
        self.plane = plane
        self.speed = speed
        self.rng = rng
        self.t = t0
        self.pos = (rng.uniform(0, plane[0]), rng.uniform(0, plane[1]))
        self._pick()

    def _pick(self) -> None:
        self.target = (self.rng.uniform(0, self.plane[0]), self.rng.uniform(0, self.plane[1]))
        self.v = max(self.rng.uniform(*self.speed), 1e-6)

    def position(self, t: float) -> tuple[float, float]:
        while t > self.t:
            x, y = self.pos
            tx, ty = self.target
            dist = math.hypot(tx - x, ty - y)
            arrive = self.t + dist / self.v
            if arrive <= t:
                self.pos, self.t = self.target, arrive
                self._pick()
            else:
                f = (t - self.t) * self.v / dist
                self.pos, self.t = (x + f * (tx - x), y + f * (ty - y)), t
        return self.pos
