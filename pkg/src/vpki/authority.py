"""Behaviour shared by the LTCA, PCA and RA services."""

from __future__ import annotations

import json
import random
import threading
from typing import Any, Optional

from . import crypto
from .codec import Record, decode
from .credentials import AuthorityCertificate, Role, TrustStore, signature_ok, verify_chain
from .errors import CryptoError, DecodeError, Rejected, VpkiError
from .messages import AuthorizationOrder, ErrorResponse, Request


class Authority:
    """An authority with a key pair, a trust store and an append-only audit log.

    ``handle`` is the single entry point for sealed wire requests; subclasses
    implement ``dispatch`` for the decoded body.
    """

    ROLE: Role

    def __init__(
        self,
        authority_id: str,
        keypair: crypto.KeyPair,
        certificate: AuthorityCertificate,
        trust_store: TrustStore,
        rng: Optional[random.Random] = None,
    ) -> None:
        if certificate.role is not self.ROLE:
            raise VpkiError("role-violation", f"{authority_id} certificate has role {certificate.role.name}")
        if certificate.public_key != keypair.public_key:
            raise VpkiError("malformed-key", "certificate does not match key pair")
        self.authority_id = authority_id
        self.keypair = keypair
        self.certificate = certificate
        self.trust_store = trust_store
        self.rng = rng if rng is not None else random.SystemRandom()
        self.deterministic = not isinstance(self.rng, random.SystemRandom)
        self.audit_log: list[dict[str, Any]] = []
        self._lock = threading.RLock()
        self._memo: dict = {}
        # last decoded (request body, response) pair; what this authority itself saw
        self.last_exchange: Optional[tuple[Optional[Record], Record]] = None

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.authority_id!r})"

    def _serial(self) -> bytes:
        return self.rng.randbytes(16)

    def _seal_seed(self) -> Optional[bytes]:
        return self.rng.randbytes(16) if self.deterministic else None

    def _audit(self, entry: dict[str, Any]) -> None:
        self.audit_log.append(entry)

    def check_order(self, order: AuthorizationOrder, actions: tuple[str, ...], now: float) -> None:
        """Verify that ``order`` is signed by a certified RA; raise ``unauthorized``."""
        if order.action not in actions:
            raise VpkiError("unauthorized", f"action {order.action!r} not accepted here")
        for cert in self.trust_store.certificates_for(order.ra_id):
            if cert.role is not Role.RA:
                continue
            try:
                verify_chain(cert, self.trust_store, now, memo=self._memo)
            except Rejected:
                continue
            if signature_ok(order.tbs(), order.signature, cert.public_key, self._memo):
                return
        raise VpkiError("unauthorized", f"order not signed by a certified RA ({order.ra_id})")

    # wire entry point

    def handle(self, data: bytes, now: float) -> bytes:
        try:
            plain = crypto.open_envelope(data, self.keypair)
            request = decode(plain)
            if not isinstance(request, Request):
                raise DecodeError("expected a Request")
        except (CryptoError, DecodeError) as exc:
            # cannot reply confidentially without a reply key
            error = ErrorResponse(exc.code, exc.message)
            self.last_exchange = (None, error)
            return error.encode()
        try:
            response = self.dispatch(request.body, now)
        except VpkiError as exc:
            response = ErrorResponse(exc.code, exc.message)
        self.last_exchange = (request.body, response)
        return crypto.seal(response.encode(), request.reply_key, self._seal_seed()).to_bytes()

    def dispatch(self, body: Record, now: float) -> Record:
        raise VpkiError("unsupported-request", type(body).__name__)

    def snapshot(self) -> dict[str, Any]:
        raise NotImplementedError

    def state_bytes(self) -> bytes:
        """Serialized state, as written to snapshot files. Never includes private keys."""
        return json.dumps(self.snapshot(), sort_keys=True, separators=(",", ":")).encode()
