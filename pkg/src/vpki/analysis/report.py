"""MetricsReport: the analysis results as one JSON document, plus CSV tables."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from ..simulator.eventlog import RunArtifacts
from .linkage import linkability_report
from .revocation import revocation_window
from .roles import compare_planted, role_separation_audit
from .sybil import sybil_audit, sybil_summary

ANALYSES = ("linkability", "sybil", "roles", "revocation")


@dataclass
class MetricsReport:
    source: str
    digest: str
    sections: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {"source": self.source, "digest": self.digest, **self.sections}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def tables(self) -> dict[str, list[dict[str, Any]]]:
        """Flat rows per section, for plotting."""
        out: dict[str, list[dict[str, Any]]] = {}
        if "sybil" in self.sections:
            out["sybil"] = list(self.sections["sybil"]["vehicles"].values())
        if "revocation" in self.sections:
            out["revocation"] = self.sections["revocation"]["serials"]
        if "roles" in self.sections:
            out["roles"] = self.sections["roles"]["violations"]
        if "linkability" in self.sections:
            s = self.sections["linkability"]
            out["linkability"] = [{k: s[k] for k in ("requests", "groups", "precision", "recall")} | s["baseline"]]
        if "bench" in self.sections:
            s = self.sections["bench"]
            out["bench"] = [{"rep": i, "latency_ms": x} for i, x in enumerate(s["latencies_ms"])]
        return out

    def write(self, out: Path | str, csv_tables: bool = False) -> Path:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(self.to_json() + "\n")
        if csv_tables:
            for name, rows in self.tables().items():
                (out / f"{name}.csv").write_text(to_csv(rows))
        return out


def to_csv(rows: list[dict[str, Any]]) -> str:
    buf = io.StringIO()
    if rows:
        fields = sorted({k for r in rows for k in r})
        writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow(r)
    return buf.getvalue()


def analyze(run: RunArtifacts, which: str, *, shuffles: int = 1000, seed: int = 0, tolerance: float = 1.0) -> dict[str, Any]:
    """One analysis section. Ground truth is read only for scoring."""
    truth = run.ground_truth or {}
    if which == "linkability":
        return linkability_report(run.log, truth, tolerance=tolerance, shuffles=shuffles, seed=seed)
    if which == "sybil":
        return sybil_summary(sybil_audit(run.log, truth))
    if which == "roles":
        found = role_separation_audit(run.states, run.log, run.taps)
        section: dict[str, Any] = {"violations": [v.to_dict() for v in found], "count": len(found)}
        planted = truth.get("planted_violations")
        if planted is not None:
            section["planted"] = compare_planted(found, planted)
        return section
    if which == "revocation":
        return revocation_window(run.log, truth)
    raise ValueError(f"unknown analysis {which!r}")


def build_report(run: RunArtifacts, which: Optional[list[str]] = None, source: str = "", **kwargs: Any) -> MetricsReport:
    report = MetricsReport(source, run.digest)
    for name in which or ANALYSES:
        report.sections[name] = analyze(run, name, **kwargs)
    return report
