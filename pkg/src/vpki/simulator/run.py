"""Scenario execution over the virtual clock.

All randomness comes from ``random.Random`` streams derived from the
scenario seed, authority and vehicle keys are seed-derived, signatures are
deterministic and envelopes use seed-derived ephemeral keys, so a run is a
pure function of its spec.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from functools import partial
from typing import Any, Optional

from .. import crypto
from ..credentials import CRL, Pseudonym
from ..errors import Rejected, VpkiError
from ..messages import PseudonymRequest, PseudonymResponse, TokenRequest, TokenResponse
from ..pca import ShuffleProxy
from ..pki import build_hierarchy
from ..vehicle import Acquisition, PseudonymPool, Vehicle
from .adversaries import AIR, SybilVehicle, collect_taps
from .engine import ChannelModel, EventQueue, RandomWaypoint
from .eventlog import EventLog, RunArtifacts
from .scenario import ScenarioSpec

log = logging.getLogger(__name__)

SIM = "sim"


@dataclass
class _Job:
    """One acquisition in flight, with what only the harness knows about it."""

    vehicle: Vehicle
    acq: Acquisition
    round: int
    kind: str = "honest"  # honest | sybil | cross-pca | replay
    identity: int = 0
    ltca_id: str = ""


@dataclass
class _SybilRound:
    period: int
    requested_start: Optional[int]
    pending: int
    jobs: list[_Job] = field(default_factory=list)
    successes: list[_Job] = field(default_factory=list)


class Simulation:
    def __init__(self, spec: ScenarioSpec) -> None:
        self.spec = spec.validate()
        seed = spec.seed
        self.grid = spec.grid
        self.t0 = spec.start - spec.bootstrap
        self.queue = EventQueue(self.t0)
        self.log = EventLog()
        self.channel = ChannelModel(spec.channel, random.Random(f"{seed}/channel"))
        self.sched = random.Random(f"{seed}/schedule")
        self.flexible = spec.lifetime_mode == "flexible"

        h = build_hierarchy(spec.trust_topology, self.grid, seed=seed, start=int(spec.start))
        self.hierarchy = h
        self.ltcas = {aid: h.ltca(aid, guards=spec.guards) for aid in h.ltca_ids}
        self.pcas = {aid: h.pca(aid, guards=spec.guards, flexible_lifetime=self.flexible) for aid in h.pca_ids}
        self.ra = h.ra(self.pcas, self.ltcas)
        self.proxies: dict[str, ShuffleProxy] = {}
        if spec.acquisition_mode == "proxy":
            for pid in h.pca_ids:
                self.proxies[pid] = ShuffleProxy(
                    partial(self._pca_handle, pid),
                    spec.proxy.batch_min,
                    random.Random(f"{seed}/proxy/{pid}"),
                    timeout=spec.proxy.timeout,
                    ground_truth=spec.ground_truth,
                )

        # verification is a pure function of the bytes, so receivers may share results
        self.signature_memo: dict = {}
        self.vehicles: dict[str, Vehicle] = {}
        self.home: dict[str, str] = {}
        self.mobility: dict[str, RandomWaypoint] = {}
        self.phase: dict[str, float] = {}
        self.dishonest = spec.dishonest
        self.truth: dict[str, Any] = {
            "vehicles": {},
            "tokens": {},
            "proxy_batches": [],
            "planted_violations": [],
            "revocations": [],
        }
        self._plant_ltca = spec.fault_injection.ltca_logs_pca_id
        self._plant_pca = spec.fault_injection.pca_logs_vehicle_id
        self._sybil_rounds: dict[str, _SybilRound] = {}

    # helpers

    def record(self, type_: str, obs: str, **fields: Any) -> None:
        self.log.append(self.queue.now, type_, obs, **fields)

    def _air(self, data: bytes, direction: str) -> None:
        self.record("v2a-frame", AIR, size=len(data), direction=direction)

    @property
    def now(self) -> float:
        return self.queue.now

    # setup

    def _setup(self) -> None:
        spec = self.spec
        self.record("scenario", SIM, spec=spec.to_dict())
        ltca_ids = self.hierarchy.ltca_ids
        for i, vid in enumerate(spec.vehicle_ids):
            cls = SybilVehicle if vid in self.dishonest else Vehicle
            v = cls(
                vid,
                crypto.generate_keypair(f"{spec.seed}/vehicle/{vid}"),
                self.hierarchy.trust_store,
                self.grid,
                rng=random.Random(f"{spec.seed}/vehicle/{vid}"),
                tolerance=spec.freshness_tolerance,
                signature_memo=self.signature_memo,
            )
            ltca_id = ltca_ids[i % len(ltca_ids)]
            ltc = self.ltcas[ltca_id].register_vehicle(vid, v.keypair.public_key, self.now)
            v.enroll(ltc)
            self.record("registration", ltca_id, vehicle_id=vid, ltc_serial=ltc.serial.hex())
            self.vehicles[vid] = v
            self.home[vid] = ltca_id
            self.truth["vehicles"][vid] = {
                "ltca": ltca_id,
                "ltc_serial": ltc.serial.hex(),
                "honest": vid not in self.dishonest,
            }
            self.mobility[vid] = RandomWaypoint(
                spec.plane, spec.speed, random.Random(f"{spec.seed}/mobility/{vid}"), self.t0
            )
            self.phase[vid] = self.sched.uniform(0, 1 / spec.beacon_rate)

        for vid in spec.vehicle_ids:
            self.queue.at(self.t0 + self.sched.uniform(0, spec.bootstrap / 4), self._initial, vid)
            if spec.beaconing:
                self.queue.at(spec.start + self.phase[vid], self._beacon, vid, 0)
        for r in spec.revocations:
            self.queue.at(r.at, self._revoke, r.vehicle)
        if spec.crl.enabled and spec.crl.interval:
            self.queue.at(spec.start + spec.crl.interval, self._periodic_crl)

    # acquisition scheduling

    def _key_span(self) -> int:
        return self.spec.key_count * self.grid.slot_duration

    def _initial(self, vid: str) -> None:
        spec = self.spec
        p0 = self.grid.period_of(spec.start)
        if spec.preload_periods:
            for k in range(spec.preload_periods):
                self._begin(vid, p0 + k, k, None)
        elif self.flexible:
            start = int(spec.start) - self.sched.randrange(0, self._key_span())
            self._begin(vid, self.grid.period_of(start), 0, start)
        else:
            self._begin(vid, p0, 0, None)

    def _schedule_next(self, job: _Job) -> None:
        spec = self.spec
        if spec.preload_periods:
            return
        lead = self.sched.uniform(*spec.refill_lead)
        vid = job.vehicle.vehicle_id
        if self.flexible:
            assert job.acq.requested_start is not None
            nxt = job.acq.requested_start + self._key_span()
            if nxt < spec.end:
                self.queue.at(nxt - lead, self._begin, vid, self.grid.period_of(nxt), job.round + 1, nxt)
        else:
            nxt = self.grid.period_interval(job.acq.period + 1).start
            if nxt < spec.end:
                self.queue.at(nxt - lead, self._begin, vid, job.acq.period + 1, job.round + 1, None)

    def _begin(self, vid: str, period: int, round_: int, requested_start: Optional[int]) -> None:
        v = self.vehicles[vid]
        if isinstance(v, SybilVehicle):
            self._begin_sybil(v, period, round_, requested_start)
            return
        pca_id = v.rng.choice(self.hierarchy.pca_ids)
        acq = v.start_acquisition(period, pca_id, self.spec.key_count, requested_start)
        self._send_token_request(_Job(v, acq, round_, ltca_id=self.home[vid]))

    def _send_token_request(self, job: _Job) -> None:
        ltca_key = self.hierarchy.trust_store.public_key(job.ltca_id)
        data = job.acq.token_request(ltca_key, self.now)
        self._air(data, "up")
        self.queue.after(self.channel.v2a_delay(), self._at_ltca, job, data)

    def _at_ltca(self, job: _Job, data: bytes) -> None:
        ltca = self.ltcas[job.ltca_id]
        reply = ltca.handle(data, self.now)
        body, resp = ltca.last_exchange  # type: ignore[misc]
        if isinstance(body, TokenRequest):
            fields: dict[str, Any] = {"vehicle_id": body.ltc.vehicle_id, "period_tag": body.period_tag}
            if isinstance(resp, TokenResponse):
                fields["token_serial"] = resp.token.serial.hex()
                self.truth["tokens"][resp.token.serial.hex()] = {
                    "vehicle": job.vehicle.vehicle_id,
                    "round": job.round,
                    "period": body.period_tag,
                    "pca": job.acq.pca_id,
                    "kind": job.kind,
                }
                self._maybe_plant_ltca(ltca, job)
            else:
                fields["error"] = resp.code  # type: ignore[attr-defined]
            self.record("token-request", job.ltca_id, **fields)
        self._air(reply, "down")
        self.queue.after(self.channel.v2a_delay(), self._token_back, job, reply)

    def _token_back(self, job: _Job, reply: bytes) -> None:
        try:
            job.acq.on_token_response(reply)
        except VpkiError as exc:
            self._failed(job, "token", exc)
            return
        self._send_pseudonym_request(job)

    def _send_pseudonym_request(self, job: _Job) -> None:
        pca_key = self.hierarchy.trust_store.public_key(job.acq.pca_id)
        data = job.acq.pseudonym_request(pca_key, self.now)
        self._air(data, "up")
        if self.proxies:
            self.queue.after(self.channel.v2a_delay(), self._at_proxy, job, data)
        else:
            self.queue.after(self.channel.v2a_delay(), self._at_pca, job, data)

    def _pca_handle(self, pca_id: str, data: bytes, now: float) -> bytes:
        pca = self.pcas[pca_id]
        reply = pca.handle(data, now)
        body, resp = pca.last_exchange  # type: ignore[misc]
        if isinstance(body, PseudonymRequest):
            fields: dict[str, Any] = {
                "token_serial": body.token.serial.hex(),
                "period_tag": body.token.period_tag,
                "requested_start": body.requested_start,
                "key_count": len(body.public_keys),
            }
            if isinstance(resp, PseudonymResponse):
                fields["pseudonyms"] = [
                    [p.serial.hex(), p.validity.start, p.validity.end] for p in resp.pseudonyms
                ]
                fields["certificates"] = [p.encode().hex() for p in resp.pseudonyms]
            else:
                fields["error"] = resp.code  # type: ignore[attr-defined]
            self.record("issuance", pca_id, **fields)
        return reply

    def _at_pca(self, job: _Job, data: bytes) -> None:
        reply = self._pca_handle(job.acq.pca_id, data, self.now)
        self._air(reply, "down")
        self.queue.after(self.channel.v2a_delay(), self._pseudonyms_back, job, reply)

    def _at_proxy(self, job: _Job, data: bytes) -> None:
        proxy = self.proxies[job.acq.pca_id]
        self._proxy_deliver(job.acq.pca_id, proxy.submit(job, data, self.now))
        deadline = proxy.deadline()
        if deadline is not None:
            self.queue.at(deadline, self._proxy_poll, job.acq.pca_id)

    def _proxy_poll(self, pca_id: str) -> None:
        self._proxy_deliver(pca_id, self.proxies[pca_id].poll(self.now))

    def _proxy_deliver(self, pca_id: str, pairs: list[tuple[Any, bytes]]) -> None:
        if not pairs:
            return
        batch = self.proxies[pca_id].batches[-1]
        self.record("proxy-batch", f"proxy-{pca_id}", size=batch.size, underflow=batch.underflow)
        if batch.permutation is not None:
            self.truth["proxy_batches"].append({
                "pca": pca_id,
                "t": round(self.now, 6),
                "size": batch.size,
                "underflow": batch.underflow,
                "permutation": batch.permutation,
                "origins": [job.vehicle.vehicle_id for job in batch.origins or []],
            })
        for job, reply in pairs:
            self._air(reply, "down")
            self.queue.after(self.channel.v2a_delay(), self._pseudonyms_back, job, reply)

    def _pseudonyms_back(self, job: _Job, reply: bytes) -> None:
        try:
            issued = job.acq.on_pseudonym_response(reply, self.now)
        except VpkiError as exc:
            self._failed(job, "pseudonyms", exc)
            return
        self._maybe_plant_pca(job)
        self.record(
            "pseudonyms-installed",
            job.vehicle.vehicle_id,
            count=len(issued),
            start=issued[0].validity.start,
            end=issued[-1].validity.end,
        )
        if job.kind == "honest":
            self._schedule_next(job)
        else:
            self._sybil_result(job, "ok")

    def _failed(self, job: _Job, stage: str, exc: VpkiError) -> None:
        self.record("acquisition-error", job.vehicle.vehicle_id, stage=stage, code=exc.code)
        if job.kind != "honest":
            self._sybil_result(job, exc.code)

    # sybil attacker

    def _begin_sybil(self, v: SybilVehicle, period: int, round_: int, requested_start: Optional[int]) -> None:
        pcas = self.hierarchy.pca_ids
        state = _SybilRound(period, requested_start, pending=len(pcas))
        self._sybil_rounds[v.vehicle_id] = state
        for i, pca_id in enumerate(pcas):
            acq = v.start_acquisition(period, pca_id, self.spec.key_count, requested_start)
            acq.pool = v.identity(i)
            job = _Job(v, acq, round_, kind="sybil", identity=i, ltca_id=self.home[v.vehicle_id])
            state.jobs.append(job)
            self._send_token_request(job)

    def _sybil_result(self, job: _Job, result: str) -> None:
        v = job.vehicle
        assert isinstance(v, SybilVehicle)
        state = self._sybil_rounds[v.vehicle_id]
        self.record(
            "attack", v.vehicle_id,
            action=job.kind, pca=job.acq.pca_id, period=job.acq.period, result=result,
        )
        if job.kind != "sybil":
            return
        state.pending -= 1
        if result == "ok":
            state.successes.append(job)
        if state.pending:
            return
        if len(state.successes) == 1:
            # the per-period guard held; try to reuse the one token at the PCAs
            self._sybil_fallback(v, state.successes[0])
        if state.successes:
            self._schedule_next(state.successes[0])

    def _sybil_fallback(self, v: SybilVehicle, job: _Job) -> None:
        others = [p for p in self.hierarchy.pca_ids if p != job.acq.pca_id]
        attempts = [("cross-pca", others[0])] if others else []
        attempts.append(("replay", job.acq.pca_id))
        for j, (kind, pca_id) in enumerate(attempts):
            acq = v.start_acquisition(job.acq.period, pca_id, self.spec.key_count, job.acq.requested_start)
            acq.token, acq.salt = job.acq.token, job.acq.salt
            acq.pool = v.identity(len(self.hierarchy.pca_ids) + j)
            self._send_pseudonym_request(_Job(v, acq, job.round, kind=kind, ltca_id=job.ltca_id))

    # beaconing

    def _position(self, vid: str) -> tuple[float, float]:
        return self.mobility[vid].position(self.now)

    def _beacon(self, vid: str, k: int) -> None:
        spec = self.spec
        v = self.vehicles[vid]
        pos = self._position(vid)
        pools: list[PseudonymPool] = getattr(v, "identities", [v.pool])
        payload = k.to_bytes(4, "big") + bytes(28)
        for i, pool in enumerate(pools):
            try:
                beacon = v.sign_beacon(payload, pos, self.now, pool)
            except VpkiError:
                if i == 0:
                    self.record("no-valid-pseudonym", vid)
                continue
            serial = beacon.pseudonym.serial.hex()
            self.record(
                "beacon-sent", AIR,
                serial=serial, issuer=beacon.pseudonym.issuer_id,
                x=round(pos[0], 3), y=round(pos[1], 3), ts_ms=beacon.timestamp_ms,
            )
            for rid, receiver in self.vehicles.items():
                if rid == vid:
                    continue
                if spec.radio_range is not None:
                    rx, ry = self._position(rid)
                    if (rx - pos[0]) ** 2 + (ry - pos[1]) ** 2 > spec.radio_range ** 2:
                        continue
                if self.channel.dropped():
                    continue
                self.queue.after(self.channel.v2v_delay(), self._receive, receiver, beacon, serial)
        nxt = spec.start + self.phase[vid] + (k + 1) / spec.beacon_rate
        if nxt < spec.end:
            self.queue.at(nxt, self._beacon, vid, k + 1)

    def _receive(self, receiver: Vehicle, beacon: Any, serial: str) -> None:
        try:
            receiver.verify_beacon(beacon, self.now)
            result = "ok"
        except Rejected as exc:
            result = exc.code
        self.record("beacon-verified", receiver.vehicle_id, serial=serial, result=result, ts_ms=beacon.timestamp_ms)

    # revocation

    def _revoke(self, vid: str) -> None:
        v = self.vehicles[vid]
        entry = v.pool.peek(self.now)
        if entry is None:
            started = [e for e in v.pool.entries if e[0].validity.start <= self.now]
            entry = started[-1] if started else (v.pool.entries[0] if v.pool.entries else None)
        if entry is None:
            self.record("revocation-failed", SIM, vehicle=vid, reason="no pseudonym to report")
            return
        pseudonym: Pseudonym = entry[0]
        before = self.pcas[pseudonym.issuer_id].crl.revoked_serials
        try:
            resolved, order = self.ra.resolve(pseudonym, "scenario revocation", self.now)
            effects = self.ra.trigger_revocation(order, self.now)
        except VpkiError as exc:
            self.record("revocation-failed", self.ra.authority_id, reason=exc.code)
            return
        self.record(
            "resolution", self.ra.authority_id,
            order_id=order.order_id.hex(), pseudonym_serial=pseudonym.serial.hex(),
            token_serial=(order.token_serial or b"").hex(), vehicle_id=resolved,
        )
        newly = sorted(s.hex() for s in effects.pca_crl.revoked_serials - before)
        self.record(
            "revocation-order", self.ra.authority_id,
            order_id=order.order_id.hex(), vehicle_id=resolved, pca=pseudonym.issuer_id,
            revoked_serials=newly, ltc_revoked=sorted(s.hex() for s in effects.ltca_crl.revoked_serials),
        )
        self.truth["revocations"].append({
            "vehicle": vid, "order_time": round(self.now, 6), "order_id": order.order_id.hex(),
        })
        for crl in (effects.ltca_crl, effects.pca_crl):
            self._publish(crl)

    def _publish(self, crl: CRL) -> None:
        self.record(
            "crl-published", crl.issuer_id,
            issuer=crl.issuer_id, sequence=crl.sequence_number,
            serials=sorted(s.hex() for s in crl.revoked_serials),
        )
        dis = self.spec.crl
        if not dis.enabled:
            return
        for v in self.vehicles.values():
            if self.channel.dropped():
                continue
            delay = dis.latency + (self.sched.uniform(0, dis.jitter) if dis.jitter else 0.0)
            self.queue.after(delay, self._crl_receive, v, crl)

    def _crl_receive(self, v: Vehicle, crl: CRL) -> None:
        try:
            result = "adopted" if v.process_crl(crl, self.now) else "stale-sequence"
        except VpkiError as exc:
            result = exc.code
        self.record("crl-received", v.vehicle_id, issuer=crl.issuer_id, sequence=crl.sequence_number, result=result)

    def _periodic_crl(self) -> None:
        for authority in [*self.ltcas.values(), *self.pcas.values()]:
            self._publish(authority.publish_crl(self.now))
        nxt = self.now + self.spec.crl.interval  # type: ignore[operator]
        if nxt < self.spec.end:
            self.queue.at(nxt, self._periodic_crl)

    # fault injection (test fixture for the role-separation audit)

    def _maybe_plant_ltca(self, ltca: Any, job: _Job) -> None:
        if self._plant_ltca <= 0:
            return
        self._plant_ltca -= 1
        index = len(ltca.audit_log)
        ltca.audit_log.append({"event": "debug", "pca_id": job.acq.pca_id})
        self.truth["planted_violations"].append({
            "authority": ltca.authority_id, "path": f"audit_log[{index}].pca_id",
            "kind": "pca-id", "value": job.acq.pca_id,
        })

    def _maybe_plant_pca(self, job: _Job) -> None:
        if self._plant_pca <= 0:
            return
        self._plant_pca -= 1
        pca = self.pcas[job.acq.pca_id]
        index = len(pca.audit_log)
        pca.audit_log.append({"event": "debug", "vehicle_id": job.vehicle.vehicle_id})
        self.truth["planted_violations"].append({
            "authority": pca.authority_id, "path": f"audit_log[{index}].vehicle_id",
            "kind": "vehicle-id", "value": job.vehicle.vehicle_id,
        })

    # run

    def run(self) -> RunArtifacts:
        self._setup()
        self.queue.run(self.spec.end)
        self.record("end", SIM, events_processed=self.queue.processed)
        states: dict[str, dict[str, Any]] = {}
        for aid, authority in [*self.ltcas.items(), *self.pcas.items()]:
            states[aid] = authority.snapshot()
        states[self.ra.authority_id] = self.ra.snapshot()
        return RunArtifacts(
            scenario=self.spec.to_dict(),
            log=self.log,
            ground_truth=self.truth if self.spec.ground_truth else None,
            states=states,
            taps=collect_taps(self.log, self.spec),
        )


def run(spec: ScenarioSpec) -> RunArtifacts:
    return Simulation(spec).run()
