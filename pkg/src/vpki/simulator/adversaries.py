"""Adversary plugins.

``SybilVehicle`` is a compromised vehicle that tries to hold several
simultaneously valid pseudonyms. The curious taps and the eavesdropper are
read-only projections of the global log onto one principal's interface.
"""

from __future__ import annotations

from typing import Any

from ..vehicle import PseudonymPool, Vehicle
from .eventlog import EventLog
from .scenario import ScenarioSpec

AIR = "air"


class SybilVehicle(Vehicle):
    """Keeps one pseudonym pool per identity it manages to obtain."""

    def __init__(self, *args: Any, **kwargs: Any) -> None:
        super().__init__(*args, **kwargs)
        self.identities: list[PseudonymPool] = [self.pool]

    def identity(self, index: int) -> PseudonymPool:
        while len(self.identities) <= index:
            self.identities.append(PseudonymPool())
        return self.identities[index]


def tap_name(adversary: dict[str, Any]) -> str:
    target = adversary.get("authority") or adversary.get("vehicle")
    return adversary["type"] if not target else f"{adversary['type']}-{target}"


def tap_observers(adversary: dict[str, Any], spec: ScenarioSpec) -> list[str]:
    kind = adversary["type"]
    if kind == "eavesdropper":
        return [AIR]
    if kind == "curious_ltca_tap":
        return [adversary.get("authority", "LTCA-1")]
    if kind == "curious_pca_tap":
        return [adversary.get("authority", "PCA-1")]
    return []


def collect_taps(log: EventLog, spec: ScenarioSpec) -> dict[str, EventLog]:
    taps = {}
    for adv in spec.adversaries:
        observers = tap_observers(adv, spec)
        if observers:
            taps[tap_name(adv)] = log.tap(*observers)
    return taps
