import itertools
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import fixture_run
from vpki.analysis.bench import BenchResult, bench_issuance
from vpki.analysis.linkage import (
    LinkageHypothesis,
    RequestView,
    linkability_report,
    pair_scores,
    shuffled_baseline,
    timing_link_attack,
)
from vpki.analysis.report import build_report, to_csv
from vpki.analysis.revocation import revocation_window, window_bound
from vpki.analysis.roles import Needles, join_violations, role_separation_audit
from vpki.analysis.sybil import max_overlap, sybil_audit, sybil_summary
from vpki.simulator.eventlog import EventLog
from vpki.simulator.live import LiveConfig, run_live
from vpki.simulator.run import run
from vpki.simulator.scenario import ScenarioSpec, load_fixture


# sybil


def sweep_overlap(windows):
    """Oracle: count live windows at every integer instant."""
    if not windows:
        return 0
    lo, hi = min(s for s, _ in windows), max(e for _, e in windows)
    return max(sum(s <= t < e for s, e in windows) for t in range(lo, hi))


@given(st.lists(st.tuples(st.integers(0, 200), st.integers(1, 40)).map(lambda p: (p[0], p[0] + p[1])), max_size=30))
@settings(max_examples=300)
def test_max_overlap_matches_sweep(windows):
    best, at = max_overlap(windows)
    assert best == sweep_overlap(windows)
    if windows:
        assert sum(s <= at < e for s, e in windows) == best


def test_max_overlap_half_open():
    assert max_overlap([(0, 10), (10, 20)])[0] == 1
    assert max_overlap([(0, 10), (9, 20), (5, 6)])[0] == 2
    assert max_overlap([]) == (0, None)


def test_empty_log_empty_sybil_report():
    assert sybil_audit([], {}) == {}
    assert sybil_summary({}) == {"vehicles": {}, "max_simultaneous": 0, "offenders": []}


def test_guards_on_everyone_at_most_one():
    s = sybil_summary(sybil_audit(fixture_run("sybil_guards_on").log, fixture_run("sybil_guards_on").ground_truth))
    assert len(s["vehicles"]) == 20
    assert all(v["max_simultaneous"] == 1 for v in s["vehicles"].values())


def test_guards_off_attacker_holds_three():
    a = fixture_run("sybil_guards_off")
    s = sybil_summary(sybil_audit(a.log, a.ground_truth))
    assert s["vehicles"]["V007"]["max_simultaneous"] == 3
    assert s["offenders"] == ["V007"]


def test_guards_off_flexible_mode_attacker_holds_three():
    d = load_fixture("sybil_guards_off").to_dict()
    d["lifetime_mode"] = "flexible"
    a = run(ScenarioSpec.from_dict(d))
    s = sybil_summary(sybil_audit(a.log, a.ground_truth))
    assert s["vehicles"]["V007"]["max_simultaneous"] == 3


def test_guards_on_attacker_is_refused():
    a = fixture_run("sybil_guards_on")
    refused = a.log.of_type("acquisition-error")
    assert refused and all(r["obs"] == "V007" for r in refused)
    assert {r["code"] for r in refused} <= {"duplicate-period-request", "wrong-pca-binding", "token-replayed"}


# linkage


def rv(rid, arrival, start, end):
    return RequestView(rid, arrival, start, end, "PCA-1")


def test_chaining_links_adjacent_windows():
    view = [rv("a1", 0, 0, 100), rv("b1", 1, 50, 150), rv("a2", 90, 100, 200), rv("b2", 140, 150, 250)]
    h = timing_link_attack(view, tolerance=1.0)
    assert sorted(map(sorted, h.groups)) == [["a1", "a2"], ["b1", "b2"]]
    assert h.scores[("a1", "a2")] == 1.0


def test_chaining_respects_tolerance():
    view = [rv("a1", 0, 0, 100), rv("a2", 90, 105, 200)]
    assert len(timing_link_attack(view, tolerance=1.0).groups) == 2
    assert len(timing_link_attack(view, tolerance=10.0).groups) == 1


def test_partition_covers_every_request_once():
    a = fixture_run("linkage_flexible")
    from vpki.analysis.linkage import pca_view

    view = pca_view(a.log)
    h = timing_link_attack(view)
    flat = [rid for g in h.groups for rid in g]
    assert sorted(flat) == sorted(r.request_id for r in view)


def test_single_vehicle_is_one_group():
    view = [rv(f"t{i}", i * 100, i * 600, (i + 1) * 600) for i in range(5)]
    h = timing_link_attack(view)
    assert len(h.groups) == 1
    assert pair_scores(h, {f"t{i}": "V001" for i in range(5)}) == (1.0, 1.0)


def pair_oracle(groups, truth):
    ids = [r for g in groups for r in g]
    label = {r: i for i, g in enumerate(groups) for r in g}
    pred = {(a, b) for a, b in itertools.combinations(ids, 2) if label[a] == label[b]}
    real = {(a, b) for a, b in itertools.combinations(ids, 2) if truth[a] == truth[b]}
    p = len(pred & real) / len(pred) if pred else 1.0
    r = len(pred & real) / len(real) if real else 1.0
    return p, r


@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 3)), min_size=1, max_size=25))
@settings(max_examples=300)
def test_pair_scores_match_pair_enumeration(assignments):
    groups: dict[int, list[str]] = {}
    truth = {}
    for i, (g, v) in enumerate(assignments):
        groups.setdefault(g, []).append(f"r{i}")
        truth[f"r{i}"] = f"V{v}"
    h = LinkageHypothesis(list(groups.values()))
    p, r = pair_scores(h, truth)
    op, orr = pair_oracle(h.groups, truth)
    assert p == pytest.approx(op) and r == pytest.approx(orr)


def test_baseline_is_seeded_and_stratified():
    h = LinkageHypothesis([["a", "b"], ["c", "d"]])
    truth = {"a": "V1", "b": "V1", "c": "V2", "d": "V2"}
    rounds = {"a": 0, "c": 0, "b": 1, "d": 1}
    x = shuffled_baseline(h, truth, rounds, 200, seed=5)
    y = shuffled_baseline(h, truth, rounds, 200, seed=5)
    assert (x.precision == y.precision).all()
    # each round keeps one request per vehicle, so precision is 1 or 0 per shuffle
    assert set(x.precision.tolist()) <= {0.0, 1.0}


def test_linkage_report_is_reproducible():
    a = fixture_run("linkage_grid")
    r1 = linkability_report(a.log, a.ground_truth, shuffles=200, seed=1)
    r2 = linkability_report(a.log, a.ground_truth, shuffles=200, seed=1)
    assert r1 == r2


# roles


@pytest.mark.parametrize("name", ["honest_baseline", "sybil_guards_on", "linkage_flexible", "linkage_grid", "revocation_crl"])
def test_honest_fixtures_have_no_violations(name):
    a = fixture_run(name)
    assert role_separation_audit(a.states, a.log, a.taps) == []


def test_resolution_present_still_clean():
    a = fixture_run("revocation_crl")
    assert a.log.of_type("resolution")
    assert role_separation_audit(a.states, a.log, a.taps) == []


def test_fault_injection_reports_exactly_planted():
    a = fixture_run("fault_injection")
    found = role_separation_audit(a.states, a.log, a.taps)
    planted = a.ground_truth["planted_violations"]
    assert sorted(v.to_dict()["path"] for v in found) == sorted(p["path"] for p in planted)
    assert {(v.authority, v.path, v.kind, v.value) for v in found} == {
        (p["authority"], p["path"], p["kind"], p["value"]) for p in planted
    }


def test_needle_hidden_in_hex_blob_is_found():
    states = {"LTCA-1": {"role": "LTCA", "audit_log": [{"blob": b"\x00\x05PCA-2\x00".hex()}]},
              "PCA-2": {"role": "PCA"}}
    found = role_separation_audit(states)
    assert [(v.kind, v.value) for v in found] == [("pca-id", "PCA-2")]


def test_identifier_prefix_is_not_a_hit():
    states = {"LTCA-1": {"role": "LTCA", "note": "PCA-12"}, "PCA-1": {"role": "PCA"}}
    assert role_separation_audit(states) == []


def test_join_across_records_is_detected():
    needles = Needles({"V001"}, set(), set(), {"ps1"}, {"tok"})
    state = {"a": [{"vehicle_id": "V001", "token": "tok"}], "b": [{"token": "tok", "pseudonym": "ps1"}]}
    (v,) = join_violations("X", state, needles)
    assert v.kind == "join" and v.value == "V001~ps1"
    assert join_violations("X", {"b": [{"token": "tok", "pseudonym": "ps1"}]}, needles) == []


# revocation


def test_no_revocations_empty_report():
    r = revocation_window(fixture_run("honest_baseline").log, fixture_run("honest_baseline").ground_truth)
    assert r["count"] == 0 and r["serials"] == [] and r["max"] is None and r["within_bound"] is None


def test_bound_from_scenario_parameters():
    spec = fixture_run("revocation_crl").scenario
    assert window_bound(spec) == pytest.approx(5 + 0.1 + 2)
    assert window_bound({"crl": {"enabled": False}}) is None


def test_crl_window_within_bound():
    a = fixture_run("revocation_crl")
    r = revocation_window(a.log, a.ground_truth)
    assert r["count"] > 0
    assert r["max"] <= r["bound"] == pytest.approx(7.1)
    assert r["within_bound"] is True


def test_window_measures_last_accepted_beacon():
    log = EventLog()
    log.append(0, "issuance", "PCA-1", token_serial="t", pseudonyms=[["s1", 0, 100]])
    log.append(10, "revocation-order", "RA-1", vehicle_id="V001", revoked_serials=["s1"])
    log.append(12, "beacon-verified", "V002", serial="s1", result="ok")
    log.append(13.5, "beacon-verified", "V002", serial="s1", result="ok")
    log.append(14, "beacon-verified", "V002", serial="s1", result="revoked")
    truth = {"vehicles": {"V001": {"honest": True}, "V002": {"honest": True}}, "tokens": {"t": {"vehicle": "V001"}}}
    r = revocation_window(log, truth)
    assert r["max"] == pytest.approx(3.5)
    assert r["serials"][0]["residual_lifetime"] == 90
    assert r["vehicles"]["V001"]["window"] == pytest.approx(3.5)


@pytest.mark.slow
def test_preload_year_window_is_residual_lifetime():
    a = fixture_run("preload_year")
    r = revocation_window(a.log, a.ground_truth)
    v = r["vehicles"]["V001"]
    interval = 1 / a.scenario["beacon_rate"]
    assert v["residual_lifetime"] > 0
    assert v["residual_lifetime"] - interval - 1e-6 <= v["window"] <= v["residual_lifetime"]


# report


def test_report_recomputes_identically(tmp_path):
    a = fixture_run("sybil_guards_off")
    kwargs = dict(shuffles=100, seed=3)
    r1 = build_report(a, source="x", **kwargs)
    r2 = build_report(a, source="x", **kwargs)
    assert r1.to_json() == r2.to_json()
    out = r1.write(tmp_path, csv_tables=True)
    assert json.loads((out / "metrics.json").read_text())["digest"] == a.digest
    assert (out / "sybil.csv").read_text().startswith("at,max_simultaneous")


def test_to_csv_empty():
    assert to_csv([]) == ""


# bench


def test_bench_result_stats():
    r = BenchResult(100, "token", [5.0, 1.0, 3.0, 2.0, 4.0])
    assert r.median == 3.0
    assert r.p95 == 5.0
    assert r.to_dict()["reference_ms"]["SR-VPKI"] == 260


def test_bench_small_count_and_zero():
    r = bench_issuance(count=5, reps=2, warmup=0)
    assert len(r.latencies_ms) == 2
    zero = bench_issuance(count=0, reps=2, warmup=0)
    assert len(zero.latencies_ms) == 2
    assert zero.median < r.median * 5


def test_bench_proxy_mode():
    r = bench_issuance(count=3, mode="proxy", reps=1, warmup=0)
    assert len(r.latencies_ms) == 1


# live


def test_short_live_run_keeps_up():
    report = run_live(LiveConfig(vehicles=5, rate=5, duration=2.0, seed=2))
    d = report.to_dict()
    assert d["beacons"] > 0
    assert d["rejected"] == 0 and d["no_valid_pseudonym"] == 0
    assert d["missed_deadlines"] == 0
