"""Pseudonym Certification Authority and the shuffling request proxy.

The PCA validates tokens (chain to an LTCA, binding to this PCA, single use)
and issues pseudonyms whose lifetimes are consecutive slots of the universal
grid, filled from the start of the token's period. It learns which
pseudonyms were issued together for one token, and nothing that identifies
the vehicle.
"""

from __future__ import annotations

import logging
import random
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Optional, Sequence, Union

from . import crypto
from .authority import Authority
from .codec import Record, ValidityInterval, decode
from .credentials import CRL, AuthorityCertificate, Pseudonym, Role, Token, TrustStore, verify_chain
from .errors import Rejected, VpkiError
from .messages import (
    AuthorizationOrder,
    CrlRequest,
    CrlResponse,
    PseudonymRequest,
    PseudonymResponse,
    ResolutionAnswer,
)
from .policy import SlotGrid

log = logging.getLogger(__name__)


def pca_binding(pca_id: str, salt: bytes) -> bytes:
    """Commitment to the target PCA that the LTCA signs blindly."""
    return crypto.digest(pca_id.encode("utf-8") + salt)


@dataclass
class _Issuance:
    ltca_id: str
    pseudonyms: list[tuple[bytes, ValidityInterval]] = field(default_factory=list)


class PCA(Authority):
    ROLE = Role.PCA

    def __init__(
        self,
        authority_id: str,
        keypair: crypto.KeyPair,
        certificate: AuthorityCertificate,
        trust_store: TrustStore,
        grid: SlotGrid,
        *,
        rng: Optional[random.Random] = None,
        guards: bool = True,
        flexible_lifetime: bool = False,
    ) -> None:
        super().__init__(authority_id, keypair, certificate, trust_store, rng)
        self.grid = grid
        self.guards = guards
        self.flexible_lifetime = flexible_lifetime
        self.replay_cache: set[bytes] = set()
        self.issuance_ledger: dict[bytes, _Issuance] = {}
        self._owner: dict[bytes, bytes] = {}
        self._validity: dict[bytes, ValidityInterval] = {}
        self.revoked: set[bytes] = set()
        # CRLs of superior authorities (an HCA/RCA revoking an LTCA certificate)
        self.authority_crls: dict[str, CRL] = {}
        self.crl = CRL(authority_id, 0, 0).signed(keypair)

    # issuance

    def _validities(self, token: Token, count: int, requested_start: Optional[int], now: float) -> list[ValidityInterval]:
        if not self.flexible_lifetime:
            return self.grid.period_slots(token.period_tag, count)
        if count > self.grid.slots_per_period:
            raise VpkiError("too-many-keys", f"{count} keys")
        start = int(now) if requested_start is None else requested_start
        tau = self.grid.slot_duration
        return [ValidityInterval(start + i * tau, start + (i + 1) * tau) for i in range(count)]

    def issue_pseudonyms(
        self,
        token: Token,
        salt: bytes,
        public_keys: Sequence[bytes],
        now: float,
        requested_start: Optional[int] = None,
    ) -> list[Pseudonym]:
        if not isinstance(token, Token):
            raise VpkiError("invalid-token", "not a token")
        try:
            verify_chain(token, self.trust_store, now, self.authority_crls, check_leaf_validity=False, memo=self._memo)
        except Rejected as exc:
            raise VpkiError("invalid-token", exc.code) from exc
        if now >= token.validity.end:
            raise VpkiError("token-expired", token.serial.hex())
        if self.guards and pca_binding(self.authority_id, salt) != token.pca_binding:
            raise VpkiError("wrong-pca-binding", "token is bound to a different PCA")
        keys = list(public_keys)
        if not keys or len(set(keys)) != len(keys):
            raise VpkiError("invalid-request", "public keys must be non-empty and distinct")
        for k in keys:
            crypto.load_public_key(k)
        validities = self._validities(token, len(keys), requested_start, now)

        with self._lock:
            if self.guards and token.serial in self.replay_cache:
                raise VpkiError("token-replayed", token.serial.hex())
            self.replay_cache.add(token.serial)
            issuance = self.issuance_ledger.setdefault(token.serial, _Issuance(token.issuer_id))
            out = []
            for key, validity in zip(keys, validities):
                p = Pseudonym(self._serial(), key, validity, self.authority_id).signed(self.keypair)
                out.append(p)
                issuance.pseudonyms.append((p.serial, validity))
                self._owner[p.serial] = token.serial
                self._validity[p.serial] = validity
            self._audit({"event": "issue", "token_serial": token.serial.hex(), "count": len(out)})
            return out  # type: ignore[return-value]

    def issued_under(self, token_serial: bytes) -> list[bytes]:
        issuance = self.issuance_ledger.get(token_serial)
        return [] if issuance is None else [s for s, _ in issuance.pseudonyms]

    # revocation

    def revoke_pseudonyms(
        self,
        target: Union[bytes, Iterable[bytes]],
        order: AuthorizationOrder,
        now: float,
    ) -> CRL:
        """Revoke all pseudonyms of a token, or the given pseudonym serials.

        Serials already expired at ``now`` are left off the CRL.
        """
        with self._lock:
            if isinstance(target, bytes):
                if target in self.issuance_ledger:
                    self.check_order(order, ("revoke-token",), now)
                    serials = self.issued_under(target)
                elif target in self._owner:
                    self.check_order(order, ("revoke-pseudonym",), now)
                    serials = [target]
                else:
                    self.check_order(order, ("revoke-token", "revoke-pseudonym"), now)
                    raise VpkiError("unknown-target", target.hex())
                expected = target
            else:
                serials = sorted(set(target))
                self.check_order(order, ("revoke-pseudonym",), now)
                unknown = [s for s in serials if s not in self._owner]
                if not serials or unknown:
                    raise VpkiError("unknown-target", ",".join(s.hex() for s in unknown))
                expected = b"".join(serials)
            if order.target != expected:
                raise VpkiError("unauthorized", "order target mismatch")
            fresh = [s for s in serials if self._validity[s].end > now]
            self.revoked.update(fresh)
            self._audit({
                "event": "revoke",
                "order_id": order.order_id.hex(),
                "serials": sorted(s.hex() for s in fresh),
            })
            return self.publish_crl(now)

    def publish_crl(self, now: float) -> CRL:
        with self._lock:
            live = frozenset(s for s in self.revoked if self._validity[s].end > now)
            self.crl = CRL(
                issuer_id=self.authority_id,
                sequence_number=self.crl.sequence_number + 1,
                issued_at=int(now),
                revoked_serials=live,
            ).signed(self.keypair)
            return self.crl

    def update_authority_crl(self, crl: CRL, now: float) -> None:
        """Adopt a CRL that revokes authority certificates; tokens from a revoked LTCA then fail."""
        verify_chain(crl, self.trust_store, now, memo=self._memo)
        current = self.authority_crls.get(crl.issuer_id)
        if current is None or crl.sequence_number >= current.sequence_number:
            self.authority_crls[crl.issuer_id] = crl

    # resolution

    def resolve_pseudonym(self, serial: bytes, order: AuthorizationOrder, now: float) -> tuple[bytes, str]:
        """Map a pseudonym to the token it was issued under (and that token's LTCA)."""
        with self._lock:
            self.check_order(order, ("resolve-pseudonym",), now)
            if order.target != serial:
                raise VpkiError("unauthorized", "order target mismatch")
            token_serial = self._owner.get(serial)
            if token_serial is None:
                raise VpkiError("unknown-pseudonym", serial.hex())
            self._audit({
                "event": "resolve",
                "order_id": order.order_id.hex(),
                "pseudonym_serial": serial.hex(),
                "token_serial": token_serial.hex(),
            })
            return token_serial, self.issuance_ledger[token_serial].ltca_id

    # wire

    def dispatch(self, body: Record, now: float) -> Record:
        if isinstance(body, PseudonymRequest):
            issued = self.issue_pseudonyms(body.token, body.salt, body.public_keys, now, body.requested_start)
            return PseudonymResponse(tuple(issued))
        if isinstance(body, AuthorizationOrder):
            if body.action == "resolve-pseudonym":
                token_serial, ltca_id = self.resolve_pseudonym(body.target, body, now)
                return ResolutionAnswer(body.order_id, token_serial, ltca_id)
            if body.action in ("revoke-token", "revoke-pseudonym"):
                return CrlResponse(self.revoke_pseudonyms(body.target, body, now))
            raise VpkiError("unauthorized", f"action {body.action!r} not accepted here")
        if isinstance(body, CrlRequest):
            return CrlResponse(self.crl)
        return super().dispatch(body, now)

    def snapshot(self) -> dict[str, Any]:
        with self._lock:
            return {
                "authority_id": self.authority_id,
                "role": "PCA",
                "certificate": self.certificate.encode().hex(),
                "slot_grid": [self.grid.epoch_origin, self.grid.slot_duration, self.grid.period_length],
                "replay_cache": sorted(s.hex() for s in self.replay_cache),
                "issuance_ledger": {
                    t.hex(): {
                        "ltca_id": iss.ltca_id,
                        "pseudonyms": [[s.hex(), v.start, v.end] for s, v in iss.pseudonyms],
                    }
                    for t, iss in sorted(self.issuance_ledger.items())
                },
                "revoked": sorted(s.hex() for s in self.revoked),
                "crl": self.crl.encode().hex(),
                "audit_log": list(self.audit_log),
            }

    def load_snapshot(self, state: dict[str, Any]) -> None:
        with self._lock:
            self.replay_cache = {bytes.fromhex(s) for s in state["replay_cache"]}
            self.issuance_ledger = {}
            self._owner = {}
            self._validity = {}
            for t_hex, entry in state["issuance_ledger"].items():
                token_serial = bytes.fromhex(t_hex)
                iss = _Issuance(entry["ltca_id"])
                for s_hex, start, end in entry["pseudonyms"]:
                    serial = bytes.fromhex(s_hex)
                    validity = ValidityInterval(start, end)
                    iss.pseudonyms.append((serial, validity))
                    self._owner[serial] = token_serial
                    self._validity[serial] = validity
                self.issuance_ledger[token_serial] = iss
            self.revoked = {bytes.fromhex(s) for s in state["revoked"]}
            self.crl = decode(bytes.fromhex(state["crl"]))  # type: ignore[assignment]
            self.audit_log = list(state["audit_log"])


# shuffling proxy


def shuffle_batch(batch: Sequence, batch_min: int, rng: random.Random, *, flush: bool = False) -> tuple[list, list[int]]:
    """Permute a batch uniformly at random.

    Returns the forwarded order and the permutation (``forwarded[i] ==
    batch[perm[i]]``). Raises ``batch-underflow`` for short batches unless
    ``flush`` is set.
    """
    if len(batch) < batch_min and not flush:
        raise VpkiError("batch-underflow", f"{len(batch)} < {batch_min}")
    perm = list(range(len(batch)))
    rng.shuffle(perm)
    return [batch[i] for i in perm], perm


@dataclass
class BatchRecord:
    size: int
    underflow: bool
    flushed_at: float
    # origin order before shuffling; kept only in ground-truth mode
    permutation: Optional[list[int]] = None
    origins: Optional[list[Any]] = None


class ShuffleProxy:
    """Collects sealed pseudonym requests and forwards them in shuffled batches.

    Requests stay sealed to the PCA; the proxy only sees opaque bytes and the
    transport origin, which it strips before forwarding. Batches of
    ``batch_min`` are forwarded at once; a partial batch is flushed after
    ``timeout`` seconds with an underflow warning.
    """

    def __init__(
        self,
        forward: Callable[[bytes, float], bytes],
        batch_min: int,
        rng: random.Random,
        *,
        timeout: float = 5.0,
        ground_truth: bool = False,
    ) -> None:
        if batch_min < 1:
            raise ValueError("batch_min must be positive")
        self.forward = forward
        self.batch_min = batch_min
        self.rng = rng
        self.timeout = timeout
        self.ground_truth = ground_truth
        self.pending: list[tuple[Any, bytes, float]] = []
        self.batches: list[BatchRecord] = []

    def submit(self, origin: Any, data: bytes, now: float) -> list[tuple[Any, bytes]]:
        """Queue a request; returns ``(origin, reply)`` pairs if a batch was forwarded."""
        self.pending.append((origin, data, now))
        if len(self.pending) >= self.batch_min:
            return self._flush(now)
        return []

    def poll(self, now: float) -> list[tuple[Any, bytes]]:
        if self.pending and now - self.pending[0][2] >= self.timeout:
            return self._flush(now)
        return []

    def deadline(self) -> Optional[float]:
        return self.pending[0][2] + self.timeout if self.pending else None

    def _flush(self, now: float) -> list[tuple[Any, bytes]]:
        batch, self.pending = self.pending, []
        underflow = len(batch) < self.batch_min
        if underflow:
            log.warning("shuffle proxy flushing short batch of %d (< %d)", len(batch), self.batch_min)
        forwarded, perm = shuffle_batch(batch, self.batch_min, self.rng, flush=True)
        self.batches.append(BatchRecord(
            size=len(batch),
            underflow=underflow,
            flushed_at=now,
            permutation=perm if self.ground_truth else None,
            origins=[o for o, _, _ in batch] if self.ground_truth else None,
        ))
        # origin metadata is not passed on; replies are routed back by position
        replies = [self.forward(data, now) for _, data, _ in forwarded]
        return [(forwarded[i][0], replies[i]) for i in range(len(forwarded))]


class ThreadedShuffleProxy:
    """Blocking front-end for live mode: ``exchange`` waits until its batch is forwarded."""

    authority_id = "proxy"

    def __init__(
        self,
        forward: Callable[[bytes, float], bytes],
        batch_min: int,
        *,
        timeout: float = 5.0,
        rng: Optional[random.Random] = None,
        clock: Callable[[], float] = time.time,
    ) -> None:
        self._proxy = ShuffleProxy(forward, batch_min, rng or random.SystemRandom(), timeout=timeout)
        self._cond = threading.Condition()
        self._replies: dict[int, bytes] = {}
        self._next = 0
        self._clock = clock

    @property
    def batches(self) -> list[BatchRecord]:
        return self._proxy.batches

    def exchange(self, data: bytes, now: float) -> bytes:
        with self._cond:
            ticket = self._next
            self._next += 1
            self._deliver(self._proxy.submit(ticket, data, self._clock()))
            while ticket not in self._replies:
                deadline = self._proxy.deadline()
                wait = None if deadline is None else max(0.0, deadline - self._clock())
                self._cond.wait(wait)
                if ticket not in self._replies:
                    self._deliver(self._proxy.poll(self._clock()))
            return self._replies.pop(ticket)

    def _deliver(self, pairs: list[tuple[Any, bytes]]) -> None:
        if pairs:
            self._replies.update(pairs)
            self._cond.notify_all()
