"""Sybil audit: how many pseudonyms did each vehicle hold valid at once?

The scan is exhaustive. The overlap count only changes at window starts,
so evaluating it at every start of every pseudonym a vehicle was issued
gives the exact maximum.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Any, Iterable

import numpy as np

CHUNK = 2048


@dataclass
class VehicleOverlap:
    vehicle: str
    pseudonyms: int
    max_simultaneous: int
    at: int | None  # a time at which the maximum is reached

    def to_dict(self) -> dict[str, Any]:
        return {
            "vehicle": self.vehicle,
            "pseudonyms": self.pseudonyms,
            "max_simultaneous": self.max_simultaneous,
            "at": self.at,
        }


def issued_windows(log: Iterable[dict[str, Any]], ground_truth: dict[str, Any]) -> dict[str, list[tuple[int, int]]]:
    """vehicle -> validity windows of every pseudonym issued to it."""
    owner = {t: info["vehicle"] for t, info in ground_truth.get("tokens", {}).items()}
    out: dict[str, list[tuple[int, int]]] = defaultdict(list)
    for r in log:
        if r["type"] != "issuance" or "pseudonyms" not in r:
            continue
        vid = owner.get(r["token_serial"])
        if vid is None:
            continue
        out[vid].extend((int(s), int(e)) for _, s, e in r["pseudonyms"])
    return out


def max_overlap(windows: list[tuple[int, int]]) -> tuple[int, int | None]:
    """Largest number of half-open windows sharing an instant, and one such instant."""
    if not windows:
        return 0, None
    arr = np.asarray(windows, dtype=np.int64)
    starts, ends = arr[:, 0], arr[:, 1]
    best, at = 0, None
    for lo in range(0, len(starts), CHUNK):
        probe = starts[lo:lo + CHUNK, None]
        counts = ((starts[None, :] <= probe) & (ends[None, :] > probe)).sum(axis=1)
        i = int(counts.argmax())
        if counts[i] > best:
            best, at = int(counts[i]), int(probe[i, 0])
    return best, at


def sybil_audit(log: Iterable[dict[str, Any]], ground_truth: dict[str, Any]) -> dict[str, VehicleOverlap]:
    windows = issued_windows(log, ground_truth)
    report = {}
    for vid in sorted(windows):
        m, at = max_overlap(windows[vid])
        report[vid] = VehicleOverlap(vid, len(windows[vid]), m, at)
    return report


def sybil_summary(report: dict[str, VehicleOverlap]) -> dict[str, Any]:
    return {
        "vehicles": {vid: r.to_dict() for vid, r in report.items()},
        "max_simultaneous": max((r.max_simultaneous for r in report.values()), default=0),
        "offenders": [vid for vid, r in report.items() if r.max_simultaneous > 1],
    }
