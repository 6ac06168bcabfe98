"""Scenario documents: what to simulate, loaded from JSON."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any, Optional

from ..credentials import TrustTopology
from ..errors import VpkiError
from ..policy import SlotGrid

ADVERSARY_TYPES = ("sybil_attacker", "curious_ltca_tap", "curious_pca_tap", "eavesdropper")


class SpecError(VpkiError):
    def __init__(self, message: str) -> None:
        super().__init__("invalid-spec", message)


@dataclass
class Channel:
    # uniform ranges in seconds
    v2a_latency: tuple[float, float] = (0.02, 0.1)
    v2v_latency: tuple[float, float] = (0.001, 0.01)
    loss: float = 0.0
    # vehicle-authority traffic is retransmitted after this delay when lost
    retransmit: float = 1.0


@dataclass
class CrlDissemination:
    enabled: bool = True
    latency: float = 5.0
    jitter: float = 0.0
    # periodic re-publication by every PCA and LTCA; None disables it
    interval: Optional[float] = None


@dataclass
class Revocation:
    at: float
    vehicle: str


@dataclass
class ProxyConfig:
    batch_min: int = 8
    timeout: float = 5.0


@dataclass
class FaultInjection:
    # number of planted leaks; the audit must find exactly these
    ltca_logs_pca_id: int = 0
    pca_logs_vehicle_id: int = 0


@dataclass
class ScenarioSpec:
    name: str = "scenario"
    seed: int = 1
    topology: dict[str, Any] = field(default_factory=lambda: {"K": 1, "L": 1, "M": 1})
    vehicle_count: int = 10
    beacon_rate: float = 1.0
    pseudonym_lifetime: int = 600
    period_length: int = 86400
    epoch_origin: int = 0
    start: float = 0.0
    duration: float = 60.0
    # initial acquisitions happen this long before beaconing starts
    bootstrap: float = 10.0
    acquisition_mode: str = "token"
    lifetime_mode: str = "grid"
    guards: bool = True
    preload_periods: int = 0
    keys_per_refill: Optional[int] = None
    refill_lead: tuple[float, float] = (30.0, 120.0)
    channel: Channel = field(default_factory=Channel)
    crl: CrlDissemination = field(default_factory=CrlDissemination)
    freshness_tolerance: float = 2.0
    radio_range: Optional[float] = None
    plane: tuple[float, float] = (1000.0, 1000.0)
    speed: tuple[float, float] = (8.0, 30.0)
    beaconing: bool = True
    revocations: list[Revocation] = field(default_factory=list)
    adversaries: list[dict[str, Any]] = field(default_factory=list)
    fault_injection: FaultInjection = field(default_factory=FaultInjection)
    proxy: ProxyConfig = field(default_factory=ProxyConfig)
    ground_truth: bool = True

    # derived views

    @property
    def trust_topology(self) -> TrustTopology:
        t = self.topology
        cross = frozenset(tuple(pair) for pair in t.get("cross_certifications", ()))
        return TrustTopology(t.get("K", 0), t["L"], t["M"], cross)

    @property
    def grid(self) -> SlotGrid:
        return SlotGrid(self.epoch_origin, self.pseudonym_lifetime, self.period_length)

    @property
    def key_count(self) -> int:
        return self.keys_per_refill or self.grid.slots_per_period

    @property
    def end(self) -> float:
        return self.start + self.duration

    @property
    def vehicle_ids(self) -> list[str]:
        width = max(3, len(str(self.vehicle_count)))
        return [f"V{i + 1:0{width}d}" for i in range(self.vehicle_count)]

    def adversaries_of(self, kind: str) -> list[dict[str, Any]]:
        return [a for a in self.adversaries if a.get("type") == kind]

    @property
    def dishonest(self) -> set[str]:
        return {a["vehicle"] for a in self.adversaries_of("sybil_attacker")}

    def validate(self) -> "ScenarioSpec":
        def positive(name: str, value: float) -> None:
            if not value > 0:
                raise SpecError(f"{name} must be positive, got {value!r}")

        try:
            self.trust_topology
            self.grid
        except VpkiError as exc:
            raise SpecError(exc.message) from exc
        for name in ("vehicle_count", "beacon_rate", "pseudonym_lifetime", "period_length", "duration"):
            positive(name, getattr(self, name))
        if not 1 <= self.beacon_rate <= 10:
            raise SpecError(f"beacon_rate must be within [1, 10] Hz, got {self.beacon_rate}")
        if self.bootstrap < 0 or self.preload_periods < 0:
            raise SpecError("bootstrap and preload_periods must not be negative")
        if self.acquisition_mode not in ("token", "proxy"):
            raise SpecError(f"unknown acquisition_mode {self.acquisition_mode!r}")
        if self.lifetime_mode not in ("grid", "flexible"):
            raise SpecError(f"unknown lifetime_mode {self.lifetime_mode!r}")
        if self.key_count > self.grid.slots_per_period or self.key_count < 1:
            raise SpecError(f"keys_per_refill must be within [1, {self.grid.slots_per_period}]")
        for lo, hi, name in (
            (*self.channel.v2a_latency, "v2a_latency"),
            (*self.channel.v2v_latency, "v2v_latency"),
            (*self.refill_lead, "refill_lead"),
            (*self.speed, "speed"),
        ):
            if not 0 <= lo <= hi:
                raise SpecError(f"{name} must be an ordered non-negative range")
        if not 0 <= self.channel.loss < 1:
            raise SpecError("loss must be within [0, 1)")
        positive("retransmit", self.channel.retransmit)
        if self.crl.latency < 0 or self.crl.jitter < 0:
            raise SpecError("crl latency must not be negative")
        if self.crl.interval is not None:
            positive("crl.interval", self.crl.interval)
        positive("freshness_tolerance", self.freshness_tolerance)
        if self.radio_range is not None:
            positive("radio_range", self.radio_range)
        positive("plane width", self.plane[0])
        positive("plane height", self.plane[1])
        positive("proxy.batch_min", self.proxy.batch_min)
        positive("proxy.timeout", self.proxy.timeout)
        ids = set(self.vehicle_ids)
        for r in self.revocations:
            if r.vehicle not in ids:
                raise SpecError(f"revocation of unknown vehicle {r.vehicle}")
        for a in self.adversaries:
            if a.get("type") not in ADVERSARY_TYPES:
                raise SpecError(f"unknown adversary type {a.get('type')!r}")
            if a["type"] == "sybil_attacker" and a.get("vehicle") not in ids:
                raise SpecError("sybil_attacker needs a known 'vehicle'")
        return self

    # JSON

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ScenarioSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise SpecError(f"unknown fields: {', '.join(sorted(unknown))}")
        d = dict(data)
        nested = {"channel": Channel, "crl": CrlDissemination, "proxy": ProxyConfig, "fault_injection": FaultInjection}
        for key, kind in nested.items():
            if key in d:
                try:
                    d[key] = kind(**d[key])
                except TypeError as exc:
                    raise SpecError(f"{key}: {exc}") from exc
        if "channel" in d:
            ch = d["channel"]
            ch.v2a_latency, ch.v2v_latency = tuple(ch.v2a_latency), tuple(ch.v2v_latency)
        for key in ("refill_lead", "plane", "speed"):
            if key in d:
                d[key] = tuple(d[key])
        if "revocations" in d:
            d["revocations"] = [Revocation(**r) for r in d["revocations"]]
        try:
            spec = cls(**d)
        except TypeError as exc:
            raise SpecError(str(exc)) from exc
        return spec.validate()

    @classmethod
    def load(cls, path: Path | str) -> "ScenarioSpec":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise SpecError(f"{path}: {exc}") from exc
        return cls.from_dict(data)


def fixture_names() -> list[str]:
    root = resources.files("vpki") / "fixtures"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_fixture(name: str) -> ScenarioSpec:
    path = resources.files("vpki") / "fixtures" / f"{name}.json"
    if not path.is_file():
        raise SpecError(f"no bundled fixture named {name!r}")
    return ScenarioSpec.from_dict(json.loads(path.read_text()))


def resolve_scenario(ref: str) -> ScenarioSpec:
    """Load a scenario from a file path, or a bundled fixture by name."""
    if Path(ref).is_file():
        return ScenarioSpec.load(ref)
    return load_fixture(ref.removeprefix("fixture:"))
