"""Event log (NDJSON) and the ground-truth sidecar.

Every record carries ``t`` (virtual seconds), ``type`` and ``obs``: the
principal whose interface produced the record (an authority id, a vehicle
id, ``air`` for the radio medium, or ``sim`` for the harness). A tap is the
projection of the log onto one principal. The ground truth (who really
owns which token and pseudonym) lives in a separate compressed file that
only the scoring steps of the analysis read.
"""

from __future__ import annotations

import hashlib
import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Optional

from ..errors import VpkiError

GROUND_TRUTH_MAGIC = b"VPKIGT\x01"
EVENTS_FILE = "events.ndjson"
GROUND_TRUTH_FILE = "ground_truth.bin"
SCENARIO_FILE = "scenario.json"
DIGEST_FILE = "digest.txt"
STATES_DIR = "states"
TAPS_DIR = "taps"


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


class EventLog:
    def __init__(self, records: Optional[list[dict[str, Any]]] = None) -> None:
        self.records: list[dict[str, Any]] = records if records is not None else []

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[dict[str, Any]]:
        return iter(self.records)

    def append(self, t: float, type_: str, obs: str, **fields: Any) -> dict[str, Any]:
        t = round(t, 6)
        if self.records and t < self.records[-1]["t"]:
            raise VpkiError("log-order", f"record at {t} after {self.records[-1]['t']}")
        rec = {"t": t, "type": type_, "obs": obs, **fields}
        self.records.append(rec)
        return rec

    def of_type(self, *types: str) -> list[dict[str, Any]]:
        return [r for r in self.records if r["type"] in types]

    def tap(self, *observers: str) -> "EventLog":
        """Projection onto the given principals (order preserved)."""
        wanted = set(observers)
        return EventLog([r for r in self.records if r["obs"] in wanted])

    def to_bytes(self) -> bytes:
        return "".join(canonical_json(r) + "\n" for r in self.records).encode()

    @classmethod
    def from_bytes(cls, data: bytes) -> "EventLog":
        return cls([json.loads(line) for line in data.decode().splitlines() if line])

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


def encode_ground_truth(truth: dict[str, Any]) -> bytes:
    return GROUND_TRUTH_MAGIC + zlib.compress(canonical_json(truth).encode(), 9)


def decode_ground_truth(data: bytes) -> dict[str, Any]:
    if not data.startswith(GROUND_TRUTH_MAGIC):
        raise VpkiError("decode-error", "not a ground-truth sidecar")
    return json.loads(zlib.decompress(data[len(GROUND_TRUTH_MAGIC):]))


def run_digest(log: EventLog, truth: Optional[dict[str, Any]]) -> str:
    h = hashlib.sha256(log.to_bytes())
    if truth is not None:
        h.update(b"\x00" + encode_ground_truth(truth))
    return h.hexdigest()


@dataclass
class RunArtifacts:
    """Everything one simulation run produced."""

    scenario: dict[str, Any]
    log: EventLog
    ground_truth: Optional[dict[str, Any]]
    states: dict[str, dict[str, Any]] = field(default_factory=dict)
    taps: dict[str, EventLog] = field(default_factory=dict)

    @property
    def digest(self) -> str:
        return run_digest(self.log, self.ground_truth)

    def write(self, out: Path | str) -> Path:
        out = Path(out)
        (out / STATES_DIR).mkdir(parents=True, exist_ok=True)
        (out / EVENTS_FILE).write_bytes(self.log.to_bytes())
        if self.ground_truth is not None:
            (out / GROUND_TRUTH_FILE).write_bytes(encode_ground_truth(self.ground_truth))
        (out / SCENARIO_FILE).write_text(json.dumps(self.scenario, indent=2, sort_keys=True))
        for aid, state in self.states.items():
            (out / STATES_DIR / f"{aid}.json").write_text(canonical_json(state))
        if self.taps:
            (out / TAPS_DIR).mkdir(exist_ok=True)
            for name, tap in self.taps.items():
                (out / TAPS_DIR / f"{name}.ndjson").write_bytes(tap.to_bytes())
        (out / DIGEST_FILE).write_text(self.digest + "\n")
        return out

    @classmethod
    def read(cls, path: Path | str) -> "RunArtifacts":
        path = Path(path)
        if not (path / EVENTS_FILE).is_file():
            raise VpkiError("missing-log", f"{path} has no {EVENTS_FILE}")
        truth_file = path / GROUND_TRUTH_FILE
        states = {
            p.stem: json.loads(p.read_text()) for p in sorted((path / STATES_DIR).glob("*.json"))
        } if (path / STATES_DIR).is_dir() else {}
        taps = {
            p.stem: EventLog.from_bytes(p.read_bytes()) for p in sorted((path / TAPS_DIR).glob("*.ndjson"))
        } if (path / TAPS_DIR).is_dir() else {}
        return cls(
            scenario=json.loads((path / SCENARIO_FILE).read_text()) if (path / SCENARIO_FILE).is_file() else {},
            log=EventLog.from_bytes((path / EVENTS_FILE).read_bytes()),
            ground_truth=decode_ground_truth(truth_file.read_bytes()) if truth_file.is_file() else None,
            states=states,
            taps=taps,
        )

