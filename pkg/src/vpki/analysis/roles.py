"""Role-separation audit over authority states, taps and the event log.

Two checks per LTCA or PCA artifact:

* needle scan: walk the JSON, look for forbidden identifiers as plain text
  and, inside hex strings, as byte-aligned encodings (so identifiers hidden
  in serialized records are found too);
* join check: link identifiers that appear in the same record, then link
  records sharing an identifier. If one connected component holds both a
  vehicle identity and a pseudonym serial, the artifact alone maps
  pseudonyms to vehicles.

The LTCA must not hold pseudonym serials or PCA ids. The PCA must not hold
vehicle ids or LTC serials. RA artifacts are out of scope: resolution data
is supposed to live there.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Any, Iterable, Iterator, Optional

from ..simulator.eventlog import EventLog

FORBIDDEN = {
    "LTCA": ("pseudonym-serial", "pca-id"),
    "PCA": ("vehicle-id", "ltc-serial"),
}
_HEX = re.compile(r"\A(?:[0-9a-f]{2})+\Z")


@dataclass(frozen=True, order=True)
class Violation:
    authority: str
    path: str
    kind: str
    value: str

    def to_dict(self) -> dict[str, str]:
        return {"authority": self.authority, "path": self.path, "kind": self.kind, "value": self.value}


@dataclass
class Needles:
    """Identifiers by kind, harvested from the log and the states."""

    vehicle_ids: set[str]
    ltc_serials: set[str]
    pca_ids: set[str]
    pseudonym_serials: set[str]
    token_serials: set[str]

    def of_kind(self, kind: str) -> set[str]:
        return {
            "vehicle-id": self.vehicle_ids,
            "ltc-serial": self.ltc_serials,
            "pca-id": self.pca_ids,
            "pseudonym-serial": self.pseudonym_serials,
        }[kind]


def harvest(log: Iterable[dict[str, Any]], states: dict[str, dict[str, Any]]) -> Needles:
    n = Needles(set(), set(), set(), set(), set())
    for r in log:
        t = r["type"]
        if t == "registration":
            n.vehicle_ids.add(r["vehicle_id"])
            n.ltc_serials.add(r["ltc_serial"])
        elif t == "issuance":
            n.pca_ids.add(r["obs"])
            n.token_serials.add(r["token_serial"])
            n.pseudonym_serials.update(p[0] for p in r.get("pseudonyms", []))
        elif t == "token-request" and "token_serial" in r:
            n.token_serials.add(r["token_serial"])
    n.pca_ids.update(aid for aid, s in states.items() if s.get("role") == "PCA")
    return n


def _walk(obj: Any, path: str = "") -> Iterator[tuple[str, str]]:
    """(path, string) for every string key and leaf."""
    if isinstance(obj, dict):
        for k, v in obj.items():
            sub = f"{path}.{k}" if path else str(k)
            yield sub, str(k)
            yield from _walk(v, sub)
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            yield from _walk(v, f"{path}[{i}]")
    elif isinstance(obj, str):
        yield path, obj


_TOKEN = re.compile(r"[0-9A-Za-z_-]+")


class _Scanner:
    """Set lookups: identifiers by token, serials by byte-aligned hex window."""

    def __init__(self, needles: Needles) -> None:
        self.ids = {v: "vehicle-id" for v in needles.vehicle_ids}
        self.ids.update({v: "pca-id" for v in needles.pca_ids})
        self.serials = {v: "ltc-serial" for v in needles.ltc_serials}
        self.serials.update({v: "pseudonym-serial" for v in needles.pseudonym_serials})
        self.serial_len = {len(v) for v in self.serials}
        self.id_bytes = sorted((v.encode(), v) for v in self.ids)

    def _hits(self, s: str) -> Iterator[tuple[str, str]]:
        for token in _TOKEN.findall(s):
            if token in self.ids:
                yield self.ids[token], token
            if token in self.serials:
                yield self.serials[token], token
        if len(s) < 8 or _HEX.match(s) is None:
            return
        for n in self.serial_len:
            for i in range(0, len(s) - n + 1, 2):
                window = s[i:i + n]
                if window in self.serials:
                    yield self.serials[window], window
        blob = bytes.fromhex(s)
        for raw, value in self.id_bytes:
            i = blob.find(raw)
            while i != -1:
                after = blob[i + len(raw):i + len(raw) + 1]
                before = blob[i - 1:i] if i else b""
                if not (after.isalnum() or after in (b"_",)) and not (before.isalnum() or before in (b"-", b"_")):
                    yield self.ids[value], value
                    break
                i = blob.find(raw, i + 1)

    def scan(self, authority: str, role: str, obj: Any, prefix: str = "") -> list[Violation]:
        kinds = FORBIDDEN.get(role, ())
        found = {
            Violation(authority, path, kind, value)
            for path, s in _walk(obj, prefix)
            for kind, value in self._hits(s)
            if kind in kinds
        }
        return sorted(found)


def _records(obj: Any) -> Iterator[tuple[str, Any]]:
    """Top-level records: list elements and dict entries one level down."""
    if not isinstance(obj, dict):
        yield "", obj
        return
    for k, v in obj.items():
        if isinstance(v, list):
            for i, item in enumerate(v):
                yield f"{k}[{i}]", item
        elif isinstance(v, dict):
            for kk, item in v.items():
                yield f"{k}.{kk}", [kk, item]
        else:
            yield k, v


def join_violations(authority: str, obj: Any, needles: Needles) -> list[Violation]:
    """Report one violation per component that links a vehicle to a pseudonym."""
    vehicle_side = needles.vehicle_ids | needles.ltc_serials
    linkers = vehicle_side | needles.token_serials | needles.pseudonym_serials
    parent: dict[str, str] = {}

    def find(x: str) -> str:
        while parent.setdefault(x, x) != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    first_path: dict[str, str] = {}
    for path, record in _records(obj):
        ids = [s for _, s in _walk(record) if s in linkers]
        for s in ids:
            first_path.setdefault(s, path)
        for a, b in zip(ids, ids[1:]):
            parent[find(a)] = find(b)
    components: dict[str, list[str]] = {}
    for s in parent:
        components.setdefault(find(s), []).append(s)
    out = []
    for members in components.values():
        vehicles = sorted(m for m in members if m in vehicle_side)
        pseudonyms = sorted(m for m in members if m in needles.pseudonym_serials)
        if vehicles and pseudonyms:
            out.append(Violation(authority, first_path[pseudonyms[0]], "join", f"{vehicles[0]}~{pseudonyms[0]}"))
    return sorted(out)


def _tap_role(name: str) -> tuple[Optional[str], Optional[str]]:
    for prefix, role in (("curious_ltca_tap", "LTCA"), ("curious_pca_tap", "PCA")):
        if name.startswith(prefix):
            target = name[len(prefix) + 1:] or None
            return role, target
    return None, None


def role_separation_audit(
    states: dict[str, dict[str, Any]],
    log: Optional[EventLog] = None,
    taps: Optional[dict[str, EventLog]] = None,
) -> list[Violation]:
    """Violations across every LTCA/PCA state, its projection of the log, and any authority taps."""
    records = list(log) if log is not None else []
    needles = harvest(records, states)
    scanner = _Scanner(needles)
    out: list[Violation] = []
    for aid in sorted(states):
        state = states[aid]
        role = state.get("role", "")
        if role not in FORBIDDEN:
            continue
        out += scanner.scan(aid, role, state)
        out += join_violations(aid, state, needles)
        if log is not None:
            view = [r for r in records if r["obs"] == aid]
            out += scanner.scan(aid, role, view, "log")
            out += join_violations(aid, {"log": view}, needles)
    for name, tap in sorted((taps or {}).items()):
        role, target = _tap_role(name)
        if role is None:
            continue
        out += scanner.scan(target or name, role, list(tap), f"tap:{name}")
    return sorted(set(out))


def compare_planted(found: list[Violation], planted: list[dict[str, Any]]) -> dict[str, Any]:
    expected = {Violation(p["authority"], p["path"], p["kind"], p["value"]) for p in planted}
    got = set(found)
    return {
        "missing": [v.to_dict() for v in sorted(expected - got)],
        "unexpected": [v.to_dict() for v in sorted(got - expected)],
        "exact": got == expected,
    }
