"""Long-Term Certification Authority.

Registers vehicles, issues long-term certificates and per-period tokens, and
shuns revoked vehicles. It never sees which PCA a token is meant for (only a
salted commitment) nor any pseudonym, and its audit log records nothing
beyond ``(vehicle_id, period_tag, token_serial)`` for token issuance.
"""

from __future__ import annotations

import random
from typing import Any, Optional

from . import crypto
from .authority import Authority
from .codec import Record, ValidityInterval, decode
from .credentials import (
    CRL,
    AuthorityCertificate,
    LongTermCertificate,
    Role,
    Token,
    TrustStore,
    signature_ok,
    verify_chain,
)
from .errors import Rejected, VpkiError
from .messages import (
    AuthorizationOrder,
    CrlRequest,
    CrlResponse,
    ResolutionAnswer,
    TokenRequest,
    TokenResponse,
)
from .policy import SlotGrid

DEFAULT_LTC_LIFETIME = 5 * 365 * 86400
MAX_REQUEST_SKEW = 300


class LTCA(Authority):
    ROLE = Role.LTCA

    def __init__(
        self,
        authority_id: str,
        keypair: crypto.KeyPair,
        certificate: AuthorityCertificate,
        trust_store: TrustStore,
        grid: SlotGrid,
        *,
        ltc_lifetime: int = DEFAULT_LTC_LIFETIME,
        rng: Optional[random.Random] = None,
        guards: bool = True,
    ) -> None:
        super().__init__(authority_id, keypair, certificate, trust_store, rng)
        self.grid = grid
        self.ltc_lifetime = ltc_lifetime
        self.guards = guards
        self.registry: dict[str, LongTermCertificate] = {}
        # (vehicle_id, period_tag) -> token serials; more than one only with guards off
        self.token_ledger: dict[tuple[str, int], list[bytes]] = {}
        self._token_owner: dict[bytes, str] = {}
        self.revoked_vehicles: set[str] = set()
        self.crl = CRL(authority_id, 0, 0).signed(keypair)

    # registration

    def register_vehicle(self, vehicle_id: str, public_key: bytes, now: float) -> LongTermCertificate:
        with self._lock:
            if vehicle_id in self.revoked_vehicles:
                raise VpkiError("revoked-identity", vehicle_id)
            if vehicle_id in self.registry:
                raise VpkiError("duplicate-registration", vehicle_id)
            crypto.load_public_key(public_key)
            start = int(now)
            ltc = LongTermCertificate(
                serial=self._serial(),
                vehicle_id=vehicle_id,
                public_key=public_key,
                issuer_id=self.authority_id,
                validity=ValidityInterval(start, start + self.ltc_lifetime),
            ).signed(self.keypair)
            self.registry[vehicle_id] = ltc
            self._audit({"event": "register", "vehicle_id": vehicle_id, "ltc_serial": ltc.serial.hex()})
            return ltc

    # tokens

    def _authenticate(self, request: TokenRequest, now: float) -> str:
        ltc = request.ltc
        if ltc.issuer_id != self.authority_id or self.registry.get(ltc.vehicle_id) != ltc:
            raise VpkiError("invalid-ltc", "not an LTC issued here")
        if ltc.vehicle_id in self.revoked_vehicles:
            raise VpkiError("revoked", ltc.vehicle_id)
        try:
            verify_chain(ltc, self.trust_store, now, {self.authority_id: self.crl}, memo=self._memo)
        except Rejected as exc:
            raise VpkiError("invalid-ltc", exc.code) from exc
        if not signature_ok(request.tbs(), request.signature, ltc.public_key):
            raise VpkiError("invalid-ltc", "request signature does not verify")
        if abs(request.timestamp - now) > MAX_REQUEST_SKEW:
            raise VpkiError("invalid-ltc", "request timestamp outside tolerated skew")
        return ltc.vehicle_id

    def issue_token(self, request: TokenRequest, now: float) -> Token:
        """Issue a token for exactly one universal period.

        The check-and-insert on the ledger is atomic, so concurrent requests
        for the same ``(vehicle, period)`` yield at most one token.
        """
        with self._lock:
            vehicle_id = self._authenticate(request, now)
            if len(request.pca_binding) != crypto.DIGEST_SIZE:
                raise VpkiError("invalid-request", "pca_binding must be a digest")
            key = (vehicle_id, request.period_tag)
            if self.guards and key in self.token_ledger:
                raise VpkiError("duplicate-period-request", f"{vehicle_id} period {request.period_tag}")
            token = Token(
                serial=self._serial(),
                pca_binding=request.pca_binding,
                period_tag=request.period_tag,
                validity=self.grid.period_interval(request.period_tag),
                issuer_id=self.authority_id,
            ).signed(self.keypair)
            self.token_ledger.setdefault(key, []).append(token.serial)
            self._token_owner[token.serial] = vehicle_id
            self._audit({
                "event": "token",
                "vehicle_id": vehicle_id,
                "period_tag": request.period_tag,
                "token_serial": token.serial.hex(),
            })
            return token

    # revocation and resolution

    def revoke_vehicle(
        self, vehicle_id: str, now: float, order: Optional[AuthorizationOrder] = None
    ) -> CRL:
        """Shun a vehicle: no further tokens, LTC listed on the next CRL.

        Revoking an already revoked vehicle returns the current CRL unchanged.
        """
        with self._lock:
            if order is not None:
                self.check_order(order, ("revoke-vehicle",), now)
                if order.target != vehicle_id.encode():
                    raise VpkiError("unauthorized", "order target mismatch")
            if vehicle_id not in self.registry:
                raise VpkiError("unknown-vehicle", vehicle_id)
            if vehicle_id in self.revoked_vehicles:
                return self.crl
            self.revoked_vehicles.add(vehicle_id)
            entry: dict[str, Any] = {"event": "revoke", "vehicle_id": vehicle_id}
            if order is not None:
                entry["order_id"] = order.order_id.hex()
            self._audit(entry)
            return self.publish_crl(now)

    def publish_crl(self, now: float) -> CRL:
        with self._lock:
            serials = frozenset(
                self.registry[v].serial
                for v in self.revoked_vehicles
                if self.registry[v].validity.end > now
            )
            self.crl = CRL(
                issuer_id=self.authority_id,
                sequence_number=self.crl.sequence_number + 1,
                issued_at=int(now),
                revoked_serials=serials,
            ).signed(self.keypair)
            return self.crl

    def resolve_token(self, token_serial: bytes, order: AuthorizationOrder, now: float) -> str:
        with self._lock:
            self.check_order(order, ("resolve-token",), now)
            if order.target != token_serial:
                raise VpkiError("unauthorized", "order target mismatch")
            vehicle_id = self._token_owner.get(token_serial)
            if vehicle_id is None:
                raise VpkiError("unknown-token", token_serial.hex())
            self._audit({
                "event": "resolve",
                "order_id": order.order_id.hex(),
                "token_serial": token_serial.hex(),
                "vehicle_id": vehicle_id,
            })
            return vehicle_id

    # wire

    def dispatch(self, body: Record, now: float) -> Record:
        if isinstance(body, TokenRequest):
            return TokenResponse(self.issue_token(body, now))
        if isinstance(body, AuthorizationOrder):
            if body.action == "resolve-token":
                vid = self.resolve_token(body.target, body, now)
                return ResolutionAnswer(body.order_id, body.target, self.authority_id, vid)
            if body.action == "revoke-vehicle":
                return CrlResponse(self.revoke_vehicle(body.target.decode(), now, body))
            raise VpkiError("unauthorized", f"action {body.action!r} not accepted here")
        if isinstance(body, CrlRequest):
            return CrlResponse(self.crl)
        return super().dispatch(body, now)

    def snapshot(self) -> dict[str, Any]:
        with self._lock:
            return {
                "authority_id": self.authority_id,
                "role": "LTCA",
                "certificate": self.certificate.encode().hex(),
                "registry": {vid: ltc.encode().hex() for vid, ltc in sorted(self.registry.items())},
                "token_ledger": sorted(
                    [vid, tag, s.hex()] for (vid, tag), serials in self.token_ledger.items() for s in serials
                ),
                "revoked_vehicles": sorted(self.revoked_vehicles),
                "crl": self.crl.encode().hex(),
                "audit_log": list(self.audit_log),
            }

    def load_snapshot(self, state: dict[str, Any]) -> None:
        with self._lock:
            self.registry = {vid: decode(bytes.fromhex(h)) for vid, h in state["registry"].items()}  # type: ignore[misc]
            self.token_ledger = {}
            self._token_owner = {}
            for vid, tag, serial_hex in state["token_ledger"]:
                serial = bytes.fromhex(serial_hex)
                self.token_ledger.setdefault((vid, tag), []).append(serial)
                self._token_owner[serial] = vid
            self.revoked_vehicles = set(state["revoked_vehicles"])
            self.crl = decode(bytes.fromhex(state["crl"]))  # type: ignore[assignment]
            self.audit_log = list(state["audit_log"])
