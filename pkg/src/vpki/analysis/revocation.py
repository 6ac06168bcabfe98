"""Revocation window: how long after the order was a revoked credential still accepted?

For every serial named in a revocation order the window runs from the
order to the last beacon under that serial that an honest receiver
accepted (zero if none was accepted afterwards). The residual lifetime
(validity end minus order time) is reported next to it; with no CRL
dissemination the two coincide up to one beacon interval.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Iterable, Optional


@dataclass
class SerialWindow:
    serial: str
    vehicle: Optional[str]
    order_time: float
    last_accepted: Optional[float]
    valid_until: Optional[int]

    @property
    def window(self) -> float:
        if self.last_accepted is None:
            return 0.0
        return max(0.0, self.last_accepted - self.order_time)

    @property
    def residual_lifetime(self) -> Optional[float]:
        if self.valid_until is None:
            return None
        return max(0.0, self.valid_until - self.order_time)

    def to_dict(self) -> dict[str, Any]:
        return {
            "serial": self.serial,
            "vehicle": self.vehicle,
            "order_time": self.order_time,
            "last_accepted": self.last_accepted,
            "window": round(self.window, 6),
            "residual_lifetime": self.residual_lifetime,
        }


def window_bound(scenario: dict[str, Any]) -> Optional[float]:
    """CRL latency (plus jitter) + one beacon interval + freshness tolerance, or None without dissemination."""
    crl = scenario.get("crl", {})
    if not crl.get("enabled", True):
        return None
    return (
        float(crl.get("latency", 0)) + float(crl.get("jitter", 0))
        + 1.0 / float(scenario.get("beacon_rate", 1))
        + float(scenario.get("freshness_tolerance", 0))
    )


def _scenario(records: list[dict[str, Any]]) -> dict[str, Any]:
    for r in records:
        if r["type"] == "scenario":
            return r["spec"]
    return {}


def revocation_window(
    log: Iterable[dict[str, Any]], ground_truth: Optional[dict[str, Any]] = None
) -> dict[str, Any]:
    records = list(log)
    truth = ground_truth or {}
    honest = {vid for vid, info in truth.get("vehicles", {}).items() if info.get("honest", True)}
    token_owner = {t: info["vehicle"] for t, info in truth.get("tokens", {}).items()}

    validity: dict[str, int] = {}
    serial_owner: dict[str, str] = {}
    for r in records:
        if r["type"] == "issuance" and "pseudonyms" in r:
            for serial, _, end in r["pseudonyms"]:
                validity[serial] = end
                if r["token_serial"] in token_owner:
                    serial_owner[serial] = token_owner[r["token_serial"]]

    orders: dict[str, tuple[float, str]] = {}  # serial -> (order time, vehicle)
    vehicle_orders: dict[str, float] = {}
    for r in records:
        if r["type"] == "revocation-order":
            vehicle_orders.setdefault(r["vehicle_id"], r["t"])
            for serial in r["revoked_serials"]:
                orders.setdefault(serial, (r["t"], r["vehicle_id"]))

    last: dict[str, float] = {}
    last_by_vehicle: dict[str, float] = {}
    for r in records:
        if r["type"] != "beacon-verified" or r["result"] != "ok":
            continue
        if honest and r["obs"] not in honest:
            continue
        serial = r["serial"]
        if serial in orders and r["t"] >= orders[serial][0]:
            last[serial] = r["t"]
        owner = serial_owner.get(serial)
        if owner in vehicle_orders and r["t"] >= vehicle_orders[owner]:
            last_by_vehicle[owner] = r["t"]

    windows = [
        SerialWindow(s, vid, t, last.get(s), validity.get(s))
        for s, (t, vid) in sorted(orders.items(), key=lambda kv: (kv[1][0], kv[0]))
    ]
    per_vehicle = {}
    for vid, t in sorted(vehicle_orders.items()):
        owned = [validity[s] for s, o in serial_owner.items() if o == vid and s in validity]
        per_vehicle[vid] = {
            "order_time": t,
            "last_accepted": last_by_vehicle.get(vid),
            "window": round(max(0.0, last_by_vehicle[vid] - t), 6) if vid in last_by_vehicle else 0.0,
            "residual_lifetime": max(0.0, max(owned) - t) if owned else None,
        }

    values = [w.window for w in windows]
    bound = window_bound(_scenario(records))
    return {
        "serials": [w.to_dict() for w in windows],
        "vehicles": per_vehicle,
        "count": len(values),
        "mean": sum(values) / len(values) if values else None,
        "max": max(values) if values else None,
        "bound": bound,
        "within_bound": None if bound is None or not values else max(values) <= bound,
    }
