"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime error, 3 audit or
assertion failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Optional

from .codec import Record, decode
from .credentials import CRL, TrustTopology
from .errors import VpkiError
from .pki import Hierarchy, build_hierarchy
from .policy import SlotGrid

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_AUDIT = 0, 1, 2, 3
CONFIG_ENV = "VPKI_CONFIG"

log = logging.getLogger("vpki")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass
class CliConfig:
    config_dir: Optional[Path] = None  # output of `pki init`: trust store, policy, keys
    scenario: Optional[str] = None
    out: Optional[Path] = None
    verbosity: int = 0
    seed: Optional[int] = None
    json: bool = False

    def hierarchy(self) -> Hierarchy:
        if self.config_dir is None:
            raise UsageError(f"--config (or ${CONFIG_ENV}) is required")
        for name in ("trust", "policy.bin", "keys.json", "topology.json"):
            if not (self.config_dir / name).exists():
                raise UsageError(f"{self.config_dir} has no {name}; run `vpki pki init` first")
        return Hierarchy.load(self.config_dir)


# output helpers


def _emit(cfg: CliConfig, data: Any, text: Optional[str] = None) -> None:
    if cfg.json or text is None:
        print(json.dumps(data, indent=2, sort_keys=True, default=str))
    else:
        print(text)


def _describe(rec: Record) -> dict[str, Any]:
    out: dict[str, Any] = {"type": type(rec).__name__}
    for name, _ in rec.FIELDS:
        value = getattr(rec, name)
        if isinstance(value, bytes):
            value = value.hex()
        elif isinstance(value, (frozenset, set)):
            value = sorted(v.hex() for v in value)
        elif isinstance(value, tuple):
            value = [_describe(v) if isinstance(v, Record) else (v.hex() if isinstance(v, bytes) else v) for v in value]
        elif isinstance(value, Record):
            value = _describe(value)
        elif hasattr(value, "start") and hasattr(value, "end"):
            value = {"start": value.start, "end": value.end}
        elif hasattr(value, "value") and hasattr(value, "code"):
            value = value.value
        out[name] = value
    serial = getattr(rec, "serial", None)
    if isinstance(serial, bytes) and "serial" not in out:
        out["serial"] = serial.hex()
    return out


def _text_dump(d: dict[str, Any], indent: int = 0) -> str:
    pad = "  " * indent
    lines = []
    for k, v in d.items():
        if isinstance(v, dict):
            lines.append(f"{pad}{k}:")
            lines.append(_text_dump(v, indent + 1))
        elif isinstance(v, list) and v and isinstance(v[0], dict):
            lines.append(f"{pad}{k}: [{len(v)}]")
            for item in v:
                lines.append(_text_dump(item, indent + 1))
        elif isinstance(v, list):
            lines.append(f"{pad}{k}: {', '.join(map(str, v)) if v else '-'}")
        else:
            lines.append(f"{pad}{k}: {v}")
    return "\n".join(lines)


def _read_record(path: Path) -> Record:
    data = path.read_bytes()
    try:
        text = data.decode().strip()
        if text and all(c in "0123456789abcdefABCDEF" for c in text):
            data = bytes.fromhex(text)
    except UnicodeDecodeError:
        pass
    return decode(data)


# commands


def cmd_pki_init(args: argparse.Namespace, cfg: CliConfig) -> int:
    out = Path(args.out)
    k, l, m = (int(x) for x in args.topology.split(","))
    grid = SlotGrid(args.epoch_origin, args.slot, args.period)
    h = build_hierarchy(TrustTopology(k, l, m), grid, seed=cfg.seed, start=int(args.start if args.start is not None else time.time()))
    out.mkdir(parents=True, exist_ok=True)
    h.save(out)
    _emit(cfg, {"out": str(out), "authorities": sorted(h.keys)}, f"hierarchy written to {out}: {', '.join(sorted(h.keys))}")
    return EXIT_OK


def cmd_sim_run(args: argparse.Namespace, cfg: CliConfig) -> int:
    from .simulator.run import run
    from .simulator.scenario import resolve_scenario

    spec = resolve_scenario(args.scenario)
    if cfg.seed is not None:
        spec = replace(spec, seed=cfg.seed).validate()
    started = time.perf_counter()
    artifacts = run(spec)
    elapsed = time.perf_counter() - started
    if args.out:
        artifacts.write(args.out)
    info = {
        "scenario": spec.name,
        "seed": spec.seed,
        "records": len(artifacts.log),
        "digest": artifacts.digest,
        "out": args.out,
        "seconds": round(elapsed, 3),
    }
    _emit(cfg, info, f"{artifacts.digest}  {spec.name} seed={spec.seed} records={len(artifacts.log)}")
    return EXIT_OK


def cmd_sim_fixtures(args: argparse.Namespace, cfg: CliConfig) -> int:
    from .simulator.scenario import fixture_names, load_fixture

    if args.name:
        print(load_fixture(args.name).to_json())
        return EXIT_OK
    _emit(cfg, fixture_names(), "\n".join(fixture_names()))
    return EXIT_OK


def cmd_serve(args: argparse.Namespace, cfg: CliConfig) -> int:
    from .resolution import RemoteAuthorityClient
    from .wire import FrameServer, RemoteEndpoint

    h = cfg.hierarchy()
    role = args.role
    ids = {"ltca": h.ltca_ids, "pca": h.pca_ids, "ra": ["RA-1"]}[role]
    aid = args.id or ids[0]
    if aid not in ids:
        raise UsageError(f"{aid} is not a {role.upper()} in this hierarchy")
    if role == "ltca":
        authority: Any = h.ltca(aid)
    elif role == "pca":
        authority = h.pca(aid)
    else:
        pcas, ltcas = {}, {}
        for peer in args.peer or []:
            name, _, address = peer.partition("=")
            host, _, port = address.rpartition(":")
            client = RemoteAuthorityClient(RemoteEndpoint(name, host or "127.0.0.1", int(port)), h.trust_store.public_key(name))
            (pcas if name in h.pca_ids else ltcas)[name] = client
        authority = h.ra(pcas, ltcas, journal=Path(args.journal) if args.journal else None)
    server = FrameServer(authority.handle, args.host, args.port)
    print(json.dumps({"authority": aid, "host": args.host, "port": server.port}), flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def cmd_bench_issuance(args: argparse.Namespace, cfg: CliConfig) -> int:
    from .analysis.bench import REFERENCE_MS, bench_issuance

    result = bench_issuance(args.count, args.mode, args.reps)
    d = result.to_dict()
    rows = [f"{'system':<12}{'latency (ms)':>14}", f"{'this run':<12}{d['median_ms']:>14.1f}  (median, p95 {d['p95_ms']:.1f})"]
    rows += [f"{name:<12}{ms:>14}" for name, ms in REFERENCE_MS.items()]
    _emit(cfg, d, f"issuance of {args.count} pseudonyms, {args.mode} mode, {args.reps} reps\n" + "\n".join(rows))
    return EXIT_OK


def _audit_failed(which: str, section: dict[str, Any]) -> bool:
    if which == "sybil":
        return bool(section["offenders"])
    if which == "roles":
        planted = section.get("planted")
        return not planted["exact"] if planted is not None else section["count"] > 0
    if which == "revocation":
        return section.get("within_bound") is False
    return False


def cmd_analyze(args: argparse.Namespace, cfg: CliConfig) -> int:
    from .analysis.report import build_report
    from .simulator.eventlog import RunArtifacts

    artifacts = RunArtifacts.read(args.log)
    report = build_report(artifacts, [args.kind], source=str(args.log), shuffles=args.shuffles, seed=args.baseline_seed, tolerance=args.tolerance)
    if args.out:
        report.write(args.out, csv_tables=args.csv)
    section = report.sections[args.kind]
    _emit(cfg, report.to_dict(), _text_dump({args.kind: _summary(args.kind, section)}))
    return EXIT_AUDIT if _audit_failed(args.kind, section) else EXIT_OK


def _summary(kind: str, s: dict[str, Any]) -> dict[str, Any]:
    if kind == "sybil":
        return {
            "max_simultaneous": s["max_simultaneous"],
            "offenders": s["offenders"],
            "per_vehicle": {v: r["max_simultaneous"] for v, r in s["vehicles"].items()},
        }
    if kind == "revocation":
        return {k: s[k] for k in ("count", "mean", "max", "bound", "within_bound")} | {"vehicles": s["vehicles"]}
    if kind == "roles":
        out: dict[str, Any] = {"count": s["count"], "violations": s["violations"]}
        if "planted" in s:
            out["planted_exact"] = s["planted"]["exact"]
        return out
    return s


def _run_dir_authorities(artifacts: Any) -> tuple[Any, dict[str, Any], dict[str, Any]]:
    """Rebuild the run's authorities (keys are seed-derived) and restore their states."""
    from .simulator.scenario import ScenarioSpec

    spec = ScenarioSpec.from_dict(artifacts.scenario)
    h = build_hierarchy(spec.trust_topology, spec.grid, seed=spec.seed, start=int(spec.start))
    flexible = spec.lifetime_mode == "flexible"
    ltcas = {aid: h.ltca(aid, guards=spec.guards) for aid in h.ltca_ids}
    pcas = {aid: h.pca(aid, guards=spec.guards, flexible_lifetime=flexible) for aid in h.pca_ids}
    for aid, a in [*ltcas.items(), *pcas.items()]:
        if aid in artifacts.states:
            a.load_snapshot(artifacts.states[aid])
    return h, ltcas, pcas


def cmd_resolve(args: argparse.Namespace, cfg: CliConfig) -> int:
    from .simulator.eventlog import RunArtifacts

    artifacts = RunArtifacts.read(args.log)
    serial = args.pseudonym.lower()
    cert_hex = None
    for r in artifacts.log.of_type("issuance"):
        for (s, _, _), c in zip(r.get("pseudonyms", []), r.get("certificates", [])):
            if s == serial:
                cert_hex = c
    if cert_hex is None:
        raise VpkiError("unknown-pseudonym", serial)
    h, ltcas, pcas = _run_dir_authorities(artifacts)
    ra = h.ra(pcas, ltcas)
    now = artifacts.log.records[-1]["t"] if len(artifacts.log) else 0.0
    vid, order = ra.resolve(decode(bytes.fromhex(cert_hex)), args.justification, now)  # type: ignore[arg-type]
    d = {"vehicle_id": vid, "order": order.to_json()}
    _emit(cfg, d, f"{vid}\n" + _text_dump(order.to_json()))
    return EXIT_OK


def cmd_crl_show(args: argparse.Namespace, cfg: CliConfig) -> int:
    if args.file:
        crl = _read_record(Path(args.file))
    elif args.log:
        from .simulator.eventlog import RunArtifacts

        artifacts = RunArtifacts.read(args.log)
        if not args.issuer:
            raise UsageError("--issuer is required with --log")
        state = artifacts.states.get(args.issuer)
        if state is None or "crl" not in state:
            raise VpkiError("unknown-issuer", args.issuer)
        crl = decode(bytes.fromhex(state["crl"]))
    else:
        raise UsageError("give --file or --log")
    if not isinstance(crl, CRL):
        raise VpkiError("decode-error", f"not a CRL: {type(crl).__name__}")
    if args.issuer and crl.issuer_id != args.issuer:
        raise VpkiError("unknown-issuer", f"CRL is from {crl.issuer_id}")
    d = _describe(crl)
    _emit(cfg, d, _text_dump(d))
    return EXIT_OK


def cmd_cred_inspect(args: argparse.Namespace, cfg: CliConfig) -> int:
    d = _describe(_read_record(Path(args.file)))
    _emit(cfg, d, _text_dump(d))
    return EXIT_OK


def cmd_live_beacons(args: argparse.Namespace, cfg: CliConfig) -> int:
    from .simulator.live import LiveConfig, run_live

    config = LiveConfig(
        vehicles=args.vehicles,
        rate=args.rate,
        duration=args.duration,
        radio_range=None if args.range <= 0 else args.range,
        plane=(args.plane, args.plane),
        seed=cfg.seed if cfg.seed is not None else 1,
    )
    report = run_live(config)
    d = report.to_dict()
    _emit(cfg, d, _text_dump(d))
    return EXIT_AUDIT if report.missed_deadlines else EXIT_OK


# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("-v", "--verbose", action="count", default=0)
    common.add_argument("--seed", type=int, help="seed override")
    common.add_argument("--config", type=Path, help=f"hierarchy directory (default ${CONFIG_ENV})")

    # global flags live on the leaf commands so a subparser default never overwrites them
    p = _Parser(prog="vpki", description="Vehicular PKI services, simulator and analysis")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def leaf(parent: Any, name: str, fn: Callable[..., int], help_: str) -> argparse.ArgumentParser:
        q = parent.add_parser(name, help=help_, parents=[common])
        q.set_defaults(fn=fn)
        return q

    pki = sub.add_parser("pki", help="key and certificate setup").add_subparsers(dest="sub", required=True, parser_class=_Parser)
    q = leaf(pki, "init", cmd_pki_init, "create RCA, HCAs, LTCAs, PCAs and the RA")
    q.add_argument("--out", required=True)
    q.add_argument("--topology", default="1,1,1", help="K,L,M")
    q.add_argument("--slot", type=int, default=600)
    q.add_argument("--period", type=int, default=86400)
    q.add_argument("--epoch-origin", type=int, default=0)
    q.add_argument("--start", type=int, help="validity anchor (default: now)")

    sim = sub.add_parser("sim", help="scenario simulation").add_subparsers(dest="sub", required=True, parser_class=_Parser)
    q = leaf(sim, "run", cmd_sim_run, "run a scenario file or bundled fixture")
    q.add_argument("--scenario", required=True, help="JSON file or fixture name")
    q.add_argument("--out")
    q = leaf(sim, "fixtures", cmd_sim_fixtures, "list bundled fixtures or print one")
    q.add_argument("name", nargs="?")

    q = leaf(sub, "serve", cmd_serve, "run one authority as a TCP service")
    q.add_argument("role", choices=["ltca", "pca", "ra"])
    q.add_argument("--id")
    q.add_argument("--host", default="127.0.0.1")
    q.add_argument("--port", type=int, default=0)
    q.add_argument("--peer", action="append", help="RA only: NAME=host:port of a PCA or LTCA")
    q.add_argument("--journal", help="RA only: order journal file")

    bench = sub.add_parser("bench", help="benchmarks").add_subparsers(dest="sub", required=True, parser_class=_Parser)
    q = leaf(bench, "issuance", cmd_bench_issuance, "end-to-end pseudonym issuance latency")
    q.add_argument("--count", type=int, default=100)
    q.add_argument("--mode", choices=["token", "proxy"], default="token")
    q.add_argument("--reps", type=int, default=10)

    q = leaf(sub, "analyze", cmd_analyze, "audit a run directory")
    q.add_argument("kind", choices=["linkability", "sybil", "roles", "revocation"])
    q.add_argument("--log", required=True, type=Path, help="run directory written by `sim run --out`")
    q.add_argument("--out", type=Path, help="write metrics.json (and CSV tables with --csv)")
    q.add_argument("--csv", action="store_true")
    q.add_argument("--shuffles", type=int, default=1000)
    q.add_argument("--baseline-seed", type=int, default=0)
    q.add_argument("--tolerance", type=float, default=1.0, help="linkage chaining tolerance (s)")

    q = leaf(sub, "resolve", cmd_resolve, "resolve a pseudonym of a recorded run")
    q.add_argument("--pseudonym", required=True, help="serial (hex)")
    q.add_argument("--log", required=True, type=Path)
    q.add_argument("--justification", default="operator request")

    crl = sub.add_parser("crl", help="revocation lists").add_subparsers(dest="sub", required=True, parser_class=_Parser)
    q = leaf(crl, "show", cmd_crl_show, "dump a CRL")
    q.add_argument("--issuer")
    q.add_argument("--file")
    q.add_argument("--log", type=Path)

    cred = sub.add_parser("cred", help="credentials").add_subparsers(dest="sub", required=True, parser_class=_Parser)
    q = leaf(cred, "inspect", cmd_cred_inspect, "dump any encoded record")
    q.add_argument("file")

    live = sub.add_parser("live", help="wall-clock load tests").add_subparsers(dest="sub", required=True, parser_class=_Parser)
    q = leaf(live, "beacons", cmd_live_beacons, "sign and verify beacons in real time")
    q.add_argument("--vehicles", type=int, default=50)
    q.add_argument("--rate", type=float, default=10.0)
    q.add_argument("--duration", type=float, default=60.0)
    q.add_argument("--range", type=float, default=250.0, help="radio range in m (0: everyone hears everyone)")
    q.add_argument("--plane", type=float, default=1500.0, help="side of the square plane in m")
    return p


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    env = os.environ.get(CONFIG_ENV)
    cfg = CliConfig(
        config_dir=args.config or (Path(env) if env else None),
        scenario=getattr(args, "scenario", None),
        out=Path(args.out) if getattr(args, "out", None) else None,
        verbosity=args.verbose,
        seed=args.seed,
        json=args.json,
    )
    logging.basicConfig(level=logging.WARNING - 10 * min(cfg.verbosity, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args, cfg)
    except UsageError as exc:
        print(f"vpki: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (VpkiError, OSError, ValueError) as exc:
        print(f"vpki: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
