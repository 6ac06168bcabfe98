"""Resolution Authority: two-step pseudonym -> token -> vehicle resolution.

Neither the PCA nor the LTCA can map a pseudonym to a vehicle alone. The RA
asks the PCA for the token a pseudonym was issued under, then asks that
token's LTCA for the vehicle. Orders are journalled before the first
authority call, so an order interrupted by an unreachable authority stays
pending and can be resumed with identical results.
"""

from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, Protocol

from . import crypto
from .authority import Authority
from .codec import Record, decode
from .credentials import CRL, AuthorityCertificate, Pseudonym, Role, TrustStore, verify_chain
from .errors import AuthorityUnreachable, Rejected, VpkiError
from .messages import AuthorizationOrder, CrlResponse, ResolutionAnswer, ResolveRequest, ResolveResult
from .wire import Endpoint, call


class PcaClient(Protocol):
    def resolve_pseudonym(self, serial: bytes, order: AuthorizationOrder, now: float) -> tuple[bytes, str]: ...
    def revoke_pseudonyms(self, target: bytes, order: AuthorizationOrder, now: float) -> CRL: ...


class LtcaClient(Protocol):
    def resolve_token(self, token_serial: bytes, order: AuthorizationOrder, now: float) -> str: ...
    def revoke_vehicle(self, vehicle_id: str, now: float, order: Optional[AuthorizationOrder] = None) -> CRL: ...


class RemoteAuthorityClient:
    """Talks to a remote LTCA or PCA over the sealed wire protocol."""

    def __init__(self, endpoint: Endpoint, public_key: bytes) -> None:
        self.endpoint = endpoint
        self.public_key = public_key

    def _send(self, order: AuthorizationOrder, now: float) -> Record:
        return call(self.endpoint, self.public_key, order, now)

    def resolve_pseudonym(self, serial: bytes, order: AuthorizationOrder, now: float) -> tuple[bytes, str]:
        answer = self._send(order, now)
        assert isinstance(answer, ResolutionAnswer)
        return answer.token_serial, answer.ltca_id

    def resolve_token(self, token_serial: bytes, order: AuthorizationOrder, now: float) -> str:
        answer = self._send(order, now)
        assert isinstance(answer, ResolutionAnswer)
        return answer.vehicle_id

    def revoke_pseudonyms(self, target: bytes, order: AuthorizationOrder, now: float) -> CRL:
        resp = self._send(order, now)
        assert isinstance(resp, CrlResponse)
        return resp.crl

    def revoke_vehicle(self, vehicle_id: str, now: float, order: Optional[AuthorizationOrder] = None) -> CRL:
        if order is None:
            raise VpkiError("unauthorized", "remote revocation needs an order")
        resp = self._send(order, now)
        assert isinstance(resp, CrlResponse)
        return resp.crl


@dataclass
class ResolutionOrder:
    order_id: bytes
    pseudonym_serial: bytes
    pca_id: str
    justification: str
    ra_id: str
    signature: bytes
    steps: dict[str, float] = field(default_factory=dict)
    token_serial: Optional[bytes] = None
    ltca_id: Optional[str] = None
    vehicle_id: Optional[str] = None
    revocation: Optional[dict[str, Any]] = None

    @property
    def completed(self) -> bool:
        return self.vehicle_id is not None

    @property
    def status(self) -> str:
        if self.completed:
            return "completed"
        return "pca-resolved" if self.token_serial is not None else "pending"

    def signed_bytes(self) -> bytes:
        return b"|".join([self.order_id, self.pseudonym_serial, self.justification.encode("utf-8")])

    def to_json(self) -> dict[str, Any]:
        d = asdict(self)
        for k in ("order_id", "pseudonym_serial", "signature", "token_serial"):
            if d[k] is not None:
                d[k] = d[k].hex()
        d["status"] = self.status
        return d

    @classmethod
    def from_json(cls, d: dict[str, Any]) -> "ResolutionOrder":
        d = dict(d)
        d.pop("status", None)
        for k in ("order_id", "pseudonym_serial", "signature", "token_serial"):
            if d.get(k) is not None:
                d[k] = bytes.fromhex(d[k])
        return cls(**d)


@dataclass(frozen=True)
class RevocationEffects:
    vehicle_id: str
    ltca_crl: CRL
    pca_crl: CRL


class ResolutionAuthority(Authority):
    ROLE = Role.RA

    def __init__(
        self,
        authority_id: str,
        keypair: crypto.KeyPair,
        certificate: AuthorityCertificate,
        trust_store: TrustStore,
        pcas: Mapping[str, PcaClient],
        ltcas: Mapping[str, LtcaClient],
        *,
        rng: Optional[random.Random] = None,
        journal: Optional[Path] = None,
    ) -> None:
        super().__init__(authority_id, keypair, certificate, trust_store, rng)
        self.pcas = dict(pcas)
        self.ltcas = dict(ltcas)
        self.orders: dict[bytes, ResolutionOrder] = {}
        self.journal = Path(journal) if journal is not None else None
        self.outbox: list[CRL] = []
        if self.journal is not None and self.journal.exists():
            for line in self.journal.read_text().splitlines():
                order = ResolutionOrder.from_json(json.loads(line))
                self.orders[order.order_id] = order

    def _persist(self, order: ResolutionOrder) -> None:
        if self.journal is not None:
            with self.journal.open("a") as fh:
                fh.write(json.dumps(order.to_json(), sort_keys=True) + "\n")

    def authorization(self, action: str, target: bytes, order_id: bytes, now: float) -> AuthorizationOrder:
        order = AuthorizationOrder(order_id, action, target, self.authority_id, int(now))
        return order.signed(self.keypair)  # type: ignore[return-value]

    def resolve(self, pseudonym: Pseudonym, justification: str, now: float) -> tuple[str, ResolutionOrder]:
        """Resolve a pseudonym to the long-term identity of its holder."""
        try:
            # resolution is typically ordered after the pseudonym expired
            verify_chain(pseudonym, self.trust_store, now, check_leaf_validity=False, memo=self._memo)
        except Rejected as exc:
            raise VpkiError("invalid-pseudonym", exc.code) from exc
        order_id = self._serial()
        order = ResolutionOrder(
            order_id=order_id,
            pseudonym_serial=pseudonym.serial,
            pca_id=pseudonym.issuer_id,
            justification=justification,
            ra_id=self.authority_id,
            signature=b"",
            steps={"created": now},
        )
        order.signature = crypto.sign(order.signed_bytes(), self.keypair)
        self.orders[order_id] = order
        self._persist(order)
        return self.resume(order_id, now), order

    def resume(self, order_id: bytes, now: float) -> str:
        order = self.orders.get(order_id)
        if order is None:
            raise VpkiError("unknown-order", order_id.hex())
        if order.completed:
            return order.vehicle_id  # type: ignore[return-value]

        if order.token_serial is None:
            pca = self.pcas.get(order.pca_id)
            if pca is None:
                raise AuthorityUnreachable(order.pca_id)
            auth = self.authorization("resolve-pseudonym", order.pseudonym_serial, order_id, now)
            try:
                order.token_serial, order.ltca_id = pca.resolve_pseudonym(order.pseudonym_serial, auth, now)
            except VpkiError as exc:
                if exc.code == "unknown-pseudonym":
                    raise VpkiError("pca-unknown-serial", order.pseudonym_serial.hex()) from exc
                raise
            order.steps["pca"] = now
            self._persist(order)

        ltca = self.ltcas.get(order.ltca_id or "")
        if ltca is None:
            raise AuthorityUnreachable(order.ltca_id or "?")
        auth = self.authorization("resolve-token", order.token_serial, order_id, now)
        try:
            order.vehicle_id = ltca.resolve_token(order.token_serial, auth, now)
        except VpkiError as exc:
            if exc.code == "unknown-token":
                raise VpkiError("ltca-unknown-token", order.token_serial.hex()) from exc
            raise
        order.steps["ltca"] = now
        self._persist(order)
        self._audit({
            "event": "resolution",
            "order_id": order_id.hex(),
            "pseudonym_serial": order.pseudonym_serial.hex(),
            "token_serial": order.token_serial.hex(),
            "vehicle_id": order.vehicle_id,
            "justification": order.justification,
        })
        return order.vehicle_id

    def trigger_revocation(self, order: ResolutionOrder, now: float) -> RevocationEffects:
        """Shun the resolved vehicle at its LTCA and revoke the token's pseudonyms.

        Idempotent: a second trigger returns the effects of the first.
        """
        if not order.completed:
            raise VpkiError("order-pending", order.order_id.hex())
        if order.revocation is not None:
            return self._effects(order)
        ltca = self.ltcas.get(order.ltca_id or "")
        pca = self.pcas.get(order.pca_id)
        if ltca is None or pca is None:
            raise AuthorityUnreachable(order.ltca_id if ltca is None else order.pca_id)
        vid = order.vehicle_id or ""
        ltca_crl = ltca.revoke_vehicle(
            vid, now, self.authorization("revoke-vehicle", vid.encode(), self._serial(), now)
        )
        pca_crl = pca.revoke_pseudonyms(
            order.token_serial or b"", self.authorization("revoke-token", order.token_serial or b"", self._serial(), now), now
        )
        self.outbox.extend([ltca_crl, pca_crl])
        order.revocation = {
            "at": now,
            "ltca_crl": ltca_crl.encode().hex(),
            "pca_crl": pca_crl.encode().hex(),
        }
        order.steps["revoked"] = now
        self._persist(order)
        self._audit({"event": "revocation", "order_id": order.order_id.hex(), "vehicle_id": vid})
        return self._effects(order)

    def _effects(self, order: ResolutionOrder) -> RevocationEffects:
        rev = order.revocation or {}
        return RevocationEffects(
            order.vehicle_id or "",
            decode(bytes.fromhex(rev["ltca_crl"])),  # type: ignore[arg-type]
            decode(bytes.fromhex(rev["pca_crl"])),  # type: ignore[arg-type]
        )

    def dispatch(self, body: Record, now: float) -> Record:
        if isinstance(body, ResolveRequest):
            vid, order = self.resolve(body.pseudonym, body.justification, now)
            return ResolveResult(order.order_id, vid, order.token_serial or b"")
        return super().dispatch(body, now)

    def snapshot(self) -> dict[str, Any]:
        return {
            "authority_id": self.authority_id,
            "role": "RA",
            "orders": [o.to_json() for o in self.orders.values()],
            "audit_log": list(self.audit_log),
        }
