import json
import subprocess
import sys
import time

import pytest

from vpki import crypto
from vpki.cli import EXIT_AUDIT, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main
from vpki.pki import Hierarchy
from vpki.vehicle import Vehicle
from vpki.wire import LocalEndpoint, RemoteEndpoint


def run_cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def guards_off_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "guards_off"
    assert main(["sim", "run", "--scenario", "sybil_guards_off", "--out", str(out)]) == EXIT_OK
    return out


@pytest.fixture(scope="module")
def revocation_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "revocation"
    assert main(["sim", "run", "--scenario", "revocation_crl", "--out", str(out)]) == EXIT_OK
    return out


def test_sim_run_prints_same_digest_twice(capsys):
    _, a, _ = run_cli(capsys, "sim", "run", "--scenario", "sybil_guards_on", "--json")
    _, b, _ = run_cli(capsys, "sim", "run", "--scenario", "sybil_guards_on", "--json")
    assert json.loads(a)["digest"] == json.loads(b)["digest"]


def test_seed_override_changes_digest(capsys):
    _, a, _ = run_cli(capsys, "sim", "run", "--scenario", "sybil_guards_on", "--json")
    _, b, _ = run_cli(capsys, "sim", "run", "--scenario", "sybil_guards_on", "--json", "--seed", "99")
    assert json.loads(a)["digest"] != json.loads(b)["digest"]
    assert json.loads(b)["seed"] == 99


def test_sim_run_scenario_file(capsys, tmp_path):
    spec = tmp_path / "s.json"
    spec.write_text(json.dumps({"name": "tiny", "vehicle_count": 2, "duration": 5}))
    code, out, _ = run_cli(capsys, "sim", "run", "--scenario", str(spec), "--out", str(tmp_path / "o"))
    assert code == EXIT_OK
    assert (tmp_path / "o" / "digest.txt").read_text().strip() in out


def test_analyze_sybil_guards_off_reports_three(capsys, guards_off_dir):
    code, out, _ = run_cli(capsys, "analyze", "sybil", "--log", str(guards_off_dir), "--json")
    assert code == EXIT_AUDIT
    report = json.loads(out)
    assert report["sybil"]["vehicles"]["V007"]["max_simultaneous"] == 3


def test_analyze_writes_metrics(capsys, guards_off_dir, tmp_path):
    code, out, _ = run_cli(capsys, "analyze", "roles", "--log", str(guards_off_dir), "--out", str(tmp_path), "--csv")
    assert code == EXIT_OK
    assert "count: 0" in out
    assert json.loads((tmp_path / "metrics.json").read_text())["roles"]["count"] == 0
    assert (tmp_path / "roles.csv").exists()


def test_analyze_revocation_within_bound(capsys, revocation_dir):
    code, out, _ = run_cli(capsys, "analyze", "revocation", "--log", str(revocation_dir), "--json")
    assert code == EXIT_OK
    assert json.loads(out)["revocation"]["within_bound"] is True


def test_analyze_linkability(capsys, guards_off_dir):
    code, out, _ = run_cli(capsys, "analyze", "linkability", "--log", str(guards_off_dir), "--shuffles", "50", "--json")
    assert code == EXIT_OK
    assert json.loads(out)["linkability"]["shuffles"] == 50


def test_resolve_matches_ground_truth(capsys, revocation_dir):
    from vpki.simulator.eventlog import RunArtifacts

    a = RunArtifacts.read(revocation_dir)
    owner = {t: i["vehicle"] for t, i in a.ground_truth["tokens"].items()}
    issuance = a.log.of_type("issuance")[3]
    serial = issuance["pseudonyms"][0][0]
    code, out, _ = run_cli(capsys, "resolve", "--pseudonym", serial, "--log", str(revocation_dir), "--json")
    assert code == EXIT_OK
    d = json.loads(out)
    assert d["vehicle_id"] == owner[issuance["token_serial"]]
    assert d["order"]["status"] == "completed"


def test_resolve_unknown_serial(capsys, revocation_dir):
    code, _, err = run_cli(capsys, "resolve", "--pseudonym", "00" * 16, "--log", str(revocation_dir))
    assert code == EXIT_RUNTIME
    assert "unknown-pseudonym" in err


def test_crl_show_from_run(capsys, revocation_dir):
    code, out, _ = run_cli(capsys, "crl", "show", "--issuer", "PCA-1", "--log", str(revocation_dir), "--json")
    assert code == EXIT_OK
    d = json.loads(out)
    assert d["type"] == "CRL" and d["issuer_id"] == "PCA-1"


def test_pki_init_and_cred_inspect(capsys, tmp_path):
    code, _, _ = run_cli(capsys, "pki", "init", "--out", str(tmp_path / "pki"), "--topology", "1,1,2", "--seed", "4")
    assert code == EXIT_OK
    h = Hierarchy.load(tmp_path / "pki")
    assert h.pca_ids == ["PCA-1", "PCA-2"]
    cert_file = next((tmp_path / "pki" / "trust").iterdir())
    code, out, _ = run_cli(capsys, "cred", "inspect", str(cert_file), "--json")
    assert code == EXIT_OK
    assert json.loads(out)["type"] == "AuthorityCertificate"
    code, out, _ = run_cli(capsys, "crl", "show", "--file", str(cert_file))
    assert code == EXIT_RUNTIME


def test_usage_errors(capsys):
    assert run_cli(capsys, "analyze", "nothing", "--log", "x")[0] == EXIT_USAGE
    assert run_cli(capsys)[0] == EXIT_USAGE
    assert run_cli(capsys, "serve", "ltca")[0] == EXIT_USAGE  # no --config


def test_missing_inputs_are_runtime_errors(capsys, tmp_path):
    assert run_cli(capsys, "analyze", "sybil", "--log", str(tmp_path))[0] == EXIT_RUNTIME
    assert run_cli(capsys, "cred", "inspect", str(tmp_path / "none"))[0] == EXIT_RUNTIME
    assert run_cli(capsys, "sim", "run", "--scenario", "no-such-fixture")[0] == EXIT_RUNTIME


def test_config_from_environment(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv("VPKI_CONFIG", str(tmp_path / "empty"))
    code, _, err = run_cli(capsys, "serve", "pca")
    assert code == EXIT_USAGE and "pki init" in err


def test_fixture_listing(capsys):
    code, out, _ = run_cli(capsys, "sim", "fixtures", "--json")
    assert code == EXIT_OK and "preload_year" in json.loads(out)
    code, out, _ = run_cli(capsys, "sim", "fixtures", "linkage_grid")
    assert json.loads(out)["lifetime_mode"] == "grid"


def test_bench_issuance_small(capsys):
    code, out, _ = run_cli(capsys, "bench", "issuance", "--count", "5", "--reps", "2")
    assert code == EXIT_OK
    assert "SR-VPKI" in out and "VeSPA" in out


def test_live_beacons_short(capsys):
    code, out, _ = run_cli(capsys, "live", "beacons", "--vehicles", "3", "--rate", "2", "--duration", "1", "--json")
    assert code == EXIT_OK
    assert json.loads(out)["missed_deadlines"] == 0


def test_serve_pca_process_issues_pseudonyms(tmp_path):
    pki = tmp_path / "pki"
    assert main(["pki", "init", "--out", str(pki), "--topology", "1,1,1", "--seed", "8"]) == EXIT_OK
    proc = subprocess.Popen(
        [sys.executable, "-m", "vpki.cli", "serve", "pca", "--config", str(pki)],
        stdout=subprocess.PIPE, text=True,
    )
    try:
        port = json.loads(proc.stdout.readline())["port"]
        h = Hierarchy.load(pki)
        ltca = h.ltca("LTCA-1")
        now = time.time()
        kp = crypto.generate_keypair(1)
        v = Vehicle("V001", kp, h.trust_store, h.grid)
        v.enroll(ltca.register_vehicle("V001", kp.public_key, now))
        pca_ep = RemoteEndpoint("PCA-1", "127.0.0.1", port)
        added = v.refill(h.grid.period_of(now) + 1, "PCA-1", 3, now, LocalEndpoint("LTCA-1", ltca.handle), pca_ep)
        pca_ep.close()
        assert len(added) == 3
    finally:
        proc.terminate()
        proc.wait(5)
