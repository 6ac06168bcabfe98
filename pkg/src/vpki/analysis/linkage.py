"""Timing-linkage attack by colluding PCAs, scored against ground truth.

The attacker sees only PCA-side issuance records: arrival time, token
serial and the validity windows issued. It chains request B onto request A
when B's window starts where A's coverage ends. With flexible lifetimes
each vehicle's windows form a unique chain; on the universal grid every
vehicle's window starts at the same boundary and the chaining degrades to
guessing.
"""

from __future__ import annotations

import random
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional

import numpy as np

from ..simulator.eventlog import EventLog


@dataclass(frozen=True)
class RequestView:
    request_id: str  # token serial
    arrival: float
    start: int
    end: int
    pca: str


@dataclass
class LinkageHypothesis:
    groups: list[list[str]]
    # (earlier, later) -> confidence in [0, 1]
    scores: dict[tuple[str, str], float] = field(default_factory=dict)

    def labels(self) -> dict[str, int]:
        return {rid: g for g, members in enumerate(self.groups) for rid in members}


def pca_view(log: EventLog | Iterable[dict[str, Any]], pcas: Optional[set[str]] = None) -> list[RequestView]:
    """Successful issuances as seen by the (optionally restricted) PCAs."""
    out = []
    for r in log:
        if r["type"] != "issuance" or "pseudonyms" not in r:
            continue
        if pcas is not None and r["obs"] not in pcas:
            continue
        windows = r["pseudonyms"]
        out.append(RequestView(
            r["token_serial"], r["t"],
            min(w[1] for w in windows), max(w[2] for w in windows), r["obs"],
        ))
    return out


def timing_link_attack(view: list[RequestView], tolerance: float = 1.0) -> LinkageHypothesis:
    """Greedy temporal chaining.

    Requests are processed in arrival order. Each one extends the open chain
    whose coverage end is closest to its window start (within
    ``tolerance`` seconds); ties go to the chain whose last request arrived
    earliest. Otherwise it starts a new chain.
    """
    chains: list[list[RequestView]] = []
    scores: dict[tuple[str, str], float] = {}
    for req in sorted(view, key=lambda r: (r.arrival, r.request_id)):
        best = None
        best_key = None
        for idx, chain in enumerate(chains):
            tail = chain[-1]
            if tail.arrival > req.arrival:
                continue
            gap = abs(req.start - tail.end)
            if gap > tolerance:
                continue
            key = (gap, tail.arrival, idx)
            if best_key is None or key < best_key:
                best, best_key = idx, key
        if best is None:
            chains.append([req])
        else:
            tail = chains[best][-1]
            scores[(tail.request_id, req.request_id)] = 1.0 - (best_key[0] / (tolerance + 1.0))  # type: ignore[index]
            chains[best].append(req)
    return LinkageHypothesis([[r.request_id for r in c] for c in chains], scores)


def pair_scores(hypothesis: LinkageHypothesis, truth: dict[str, str]) -> tuple[float, float]:
    """Precision and recall over same-group pairs."""
    ids = [rid for g in hypothesis.groups for rid in g if rid in truth]
    vehicles = sorted(set(truth[rid] for rid in ids))
    index = {v: i for i, v in enumerate(vehicles)}
    labels = np.array([index[truth[rid]] for rid in ids], dtype=np.int64)
    groups = np.array([g for g, members in enumerate(hypothesis.groups) for rid in members if rid in truth], dtype=np.int64)
    precision, recall = _precision_recall(groups, labels[None, :])
    return float(precision[0]), float(recall[0])


def _precision_recall(groups: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized pair precision/recall for many label assignments (rows of ``labels``)."""
    n_groups = int(groups.max()) + 1 if groups.size else 0
    n_labels = int(labels.max()) + 1 if labels.size else 0
    reps = labels.shape[0]
    if groups.size == 0:
        return np.ones(reps), np.ones(reps)
    # contingency table per repetition: count[rep, group, label]
    flat = (np.arange(reps)[:, None] * n_groups + groups[None, :]) * n_labels + labels
    counts = np.bincount(flat.ravel(), minlength=reps * n_groups * n_labels).reshape(reps, n_groups, n_labels)
    together = (counts * (counts - 1) // 2).sum(axis=(1, 2))
    group_sizes = np.bincount(groups, minlength=n_groups)
    predicted = int((group_sizes * (group_sizes - 1) // 2).sum())
    label_sizes = counts.sum(axis=1)
    actual = (label_sizes * (label_sizes - 1) // 2).sum(axis=1)
    precision = np.where(predicted > 0, together / max(predicted, 1), 1.0)
    recall = np.where(actual > 0, together / np.maximum(actual, 1), 1.0)
    return precision.astype(float), recall.astype(float)


@dataclass
class Baseline:
    precision: np.ndarray
    recall: np.ndarray

    def band(self, values: np.ndarray, lo: float = 2.5, hi: float = 97.5) -> tuple[float, float]:
        return float(np.percentile(values, lo)), float(np.percentile(values, hi))

    def summary(self) -> dict[str, float]:
        out = {}
        for name, values in (("precision", self.precision), ("recall", self.recall)):
            for q in (2.5, 50, 95, 97.5):
                out[f"{name}_p{q:g}"] = float(np.percentile(values, q))
        return out


def shuffled_baseline(
    hypothesis: LinkageHypothesis,
    truth: dict[str, str],
    strata: dict[str, Any],
    shuffles: int = 1000,
    seed: int = 0,
) -> Baseline:
    """Score the same hypothesis against ground-truth labels permuted within strata.

    Strata are the acquisition rounds: permuting vehicle labels among the
    requests of one round keeps every vehicle at one request per round,
    which is what a random partition of the same log looks like.
    """
    ids = [rid for g in hypothesis.groups for rid in g if rid in truth]
    groups = np.array([g for g, members in enumerate(hypothesis.groups) for rid in members if rid in truth], dtype=np.int64)
    vehicles = sorted(set(truth[rid] for rid in ids))
    index = {v: i for i, v in enumerate(vehicles)}
    base = np.array([index[truth[rid]] for rid in ids], dtype=np.int64)
    by_stratum: dict[Any, list[int]] = defaultdict(list)
    for pos, rid in enumerate(ids):
        by_stratum[strata.get(rid)].append(pos)
    rng = random.Random(seed)
    labels = np.empty((shuffles, len(ids)), dtype=np.int64)
    for k in range(shuffles):
        row = base.copy()
        for positions in by_stratum.values():
            perm = positions[:]
            rng.shuffle(perm)
            row[positions] = base[perm]
        labels[k] = row
    precision, recall = _precision_recall(groups, labels)
    return Baseline(precision, recall)


def truth_maps(ground_truth: dict[str, Any]) -> tuple[dict[str, str], dict[str, Any]]:
    """token serial -> vehicle, and token serial -> acquisition round."""
    tokens = ground_truth.get("tokens", {})
    return (
        {t: info["vehicle"] for t, info in tokens.items()},
        {t: info["round"] for t, info in tokens.items()},
    )


def linkability_report(
    log: EventLog,
    ground_truth: dict[str, Any],
    *,
    tolerance: float = 1.0,
    shuffles: int = 1000,
    seed: int = 0,
) -> dict[str, Any]:
    view = pca_view(log)
    hypothesis = timing_link_attack(view, tolerance)
    owner, rounds = truth_maps(ground_truth)
    precision, recall = pair_scores(hypothesis, owner)
    baseline = shuffled_baseline(hypothesis, owner, rounds, shuffles, seed)
    lo, hi = baseline.band(baseline.precision)
    p95 = float(np.percentile(baseline.precision, 95))
    return {
        "requests": len(view),
        "groups": len(hypothesis.groups),
        "precision": precision,
        "recall": recall,
        "baseline": baseline.summary(),
        "shuffles": shuffles,
        "above_baseline_p95": precision > p95,
        "within_baseline_band": lo <= precision <= hi,
    }
