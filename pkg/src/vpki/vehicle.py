"""On-board client: acquisition, pseudonym pool, beacon signing and verification."""

from __future__ import annotations

import bisect
import random
from collections import Counter
from typing import Mapping, MutableMapping, Optional

from . import crypto
from .credentials import CRL, LongTermCertificate, Pseudonym, Token, TrustStore, signature_ok, verify_chain
from .errors import Rejected, VpkiError
from .messages import Beacon, PseudonymRequest, PseudonymResponse, TokenRequest, TokenResponse
from .pca import pca_binding
from .policy import SlotGrid
from .wire import Endpoint, open_response, seal_request

DEFAULT_TOLERANCE = 2.0


class PseudonymPool:
    """Pseudonyms with their private keys, ordered by validity start.

    At most one entry is valid at any instant; a serial that has been left
    behind (moved to ``used_serials``) is never signed with again.
    """

    def __init__(self) -> None:
        self._starts: list[int] = []
        self.entries: list[tuple[Pseudonym, crypto.KeyPair]] = []
        self.used_serials: set[bytes] = set()
        self._active: Optional[bytes] = None

    def __len__(self) -> int:
        return len(self.entries)

    def add(self, items: list[tuple[Pseudonym, crypto.KeyPair]]) -> None:
        new = sorted(items, key=lambda e: e[0].validity.start)
        for a, b in zip(new, new[1:]):
            if a[0].validity.overlaps(b[0].validity):
                raise VpkiError("pool-conflict", "overlapping pseudonyms in one batch")
        for p, _ in new:
            i = bisect.bisect_left(self._starts, p.validity.start)
            for j in (i - 1, i):
                if 0 <= j < len(self.entries) and self.entries[j][0].validity.overlaps(p.validity):
                    raise VpkiError("pool-conflict", f"{p.serial.hex()} overlaps an existing entry")
        for entry in new:
            i = bisect.bisect_right(self._starts, entry[0].validity.start)
            self._starts.insert(i, entry[0].validity.start)
            self.entries.insert(i, entry)

    def current(self, now: float) -> Optional[tuple[Pseudonym, crypto.KeyPair]]:
        i = bisect.bisect_right(self._starts, now) - 1
        entry = None
        if i >= 0 and self.entries[i][0].validity.contains(now):
            entry = self.entries[i]
        serial = entry[0].serial if entry else None
        if serial != self._active:
            if self._active is not None:
                self.used_serials.add(self._active)
            self._active = serial
        if serial is not None and serial in self.used_serials:
            return None
        return entry

    def peek(self, now: float) -> Optional[tuple[Pseudonym, crypto.KeyPair]]:
        """The entry valid at ``now``, without advancing the change discipline."""
        i = bisect.bisect_right(self._starts, now) - 1
        if i >= 0 and self.entries[i][0].validity.contains(now):
            return self.entries[i]
        return None

    def coverage_end(self) -> Optional[int]:
        return self.entries[-1][0].validity.end if self.entries else None

    def prune(self, now: float) -> None:
        """Drop entries that expired before ``now``."""
        keep = 0
        while keep < len(self.entries) and self.entries[keep][0].validity.end <= now:
            self.used_serials.add(self.entries[keep][0].serial)
            keep += 1
        if keep:
            del self.entries[:keep]
            del self._starts[:keep]


def verify_beacon(
    beacon: Beacon,
    trust_store: TrustStore,
    crl_cache: Mapping[str, CRL],
    now: float,
    tolerance: float = DEFAULT_TOLERANCE,
    *,
    chain_memo: Optional[MutableMapping] = None,
    signature_memo: Optional[MutableMapping] = None,
) -> None:
    """Raise :class:`Rejected` with ``bad-chain``, ``bad-signature``, ``stale`` or ``revoked``.

    ``chain_memo`` caches pseudonym/authority signature checks (validity and
    CRL status are still evaluated on every call). ``signature_memo`` caches
    beacon signatures and is only meant for simulations in which many
    receivers see the same bytes.
    """
    p = beacon.pseudonym
    crl = crl_cache.get(p.issuer_id)
    if crl is not None and p.serial in crl.revoked_serials:
        raise Rejected("revoked", p.serial.hex())
    if abs(now - beacon.timestamp) > tolerance:
        raise Rejected("stale", f"{now - beacon.timestamp:.3f}s old")
    try:
        verify_chain(p, trust_store, beacon.timestamp, crl_cache, memo=chain_memo)
    except Rejected as exc:
        if exc.code == "revoked":
            raise
        raise Rejected("bad-chain", exc.code) from exc
    if not signature_ok(beacon.tbs(), beacon.signature, p.public_key, signature_memo):
        raise Rejected("bad-signature", p.serial.hex())


class Acquisition:
    """One token + pseudonym acquisition, split into sendable steps.

    The simulator drives the steps with message latency in between;
    :meth:`Vehicle.refill` runs them back to back.
    """

    def __init__(
        self,
        vehicle: "Vehicle",
        period: int,
        pca_id: str,
        key_count: int,
        requested_start: Optional[int] = None,
    ) -> None:
        self.vehicle = vehicle
        self.period = period
        self.pca_id = pca_id
        self.key_count = key_count
        self.requested_start = requested_start
        self.salt = vehicle.rng.randbytes(16)
        self.binding = pca_binding(pca_id, self.salt)
        self.token: Optional[Token] = None
        self.keys: list[crypto.KeyPair] = []
        # pool the pseudonyms go to; None means the vehicle's own pool
        self.pool: Optional[PseudonymPool] = None
        self._reply: Optional[crypto.KeyPair] = None

    def token_request(self, ltca_key: bytes, now: float) -> bytes:
        v = self.vehicle
        if v.ltc is None:
            raise VpkiError("invalid-ltc", "vehicle is not enrolled")
        req = TokenRequest(v.ltc, self.binding, self.period, int(now)).signed(v.keypair)
        data, self._reply = seal_request(req, ltca_key, v._seed())
        return data

    def on_token_response(self, data: bytes) -> Token:
        assert self._reply is not None
        resp = open_response(data, self._reply)
        if not isinstance(resp, TokenResponse):
            raise VpkiError("unexpected-response", type(resp).__name__)
        if resp.token.pca_binding != self.binding or resp.token.period_tag != self.period:
            raise VpkiError("invalid-token", "token does not match the request")
        self.token = resp.token
        return resp.token

    def pseudonym_request(self, pca_key: bytes, now: float) -> bytes:
        v = self.vehicle
        if self.token is None:
            raise VpkiError("invalid-token", "no token yet")
        self.keys = [crypto.generate_keypair(v._seed()) for _ in range(self.key_count)]
        req = PseudonymRequest(
            self.token, self.salt, tuple(k.public_key for k in self.keys), self.requested_start
        )
        data, self._reply = seal_request(req, pca_key, v._seed())
        return data

    def on_pseudonym_response(self, data: bytes, now: float) -> list[Pseudonym]:
        assert self._reply is not None
        resp = open_response(data, self._reply)
        if not isinstance(resp, PseudonymResponse):
            raise VpkiError("unexpected-response", type(resp).__name__)
        return self.vehicle.install(list(resp.pseudonyms), self.keys, now, self.pool)


class Vehicle:
    def __init__(
        self,
        vehicle_id: str,
        keypair: crypto.KeyPair,
        trust_store: TrustStore,
        grid: SlotGrid,
        *,
        rng: Optional[random.Random] = None,
        tolerance: float = DEFAULT_TOLERANCE,
        signature_memo: Optional[MutableMapping] = None,
    ) -> None:
        self.vehicle_id = vehicle_id
        self.keypair = keypair
        self.trust_store = trust_store
        self.grid = grid
        self.rng = rng if rng is not None else random.SystemRandom()
        self.deterministic = not isinstance(self.rng, random.SystemRandom)
        self.tolerance = tolerance
        self.ltc: Optional[LongTermCertificate] = None
        self.pool = PseudonymPool()
        self.crl_cache: dict[str, CRL] = {}
        self.stats: Counter = Counter()
        self._chain_memo: dict = {}
        self._signature_memo = signature_memo

    def __repr__(self) -> str:
        return f"Vehicle({self.vehicle_id!r})"

    def _seed(self) -> Optional[bytes]:
        return self.rng.randbytes(16) if self.deterministic else None

    # acquisition

    def enroll(self, ltc: LongTermCertificate) -> None:
        if ltc.public_key != self.keypair.public_key or ltc.vehicle_id != self.vehicle_id:
            raise VpkiError("invalid-ltc", "certificate does not belong to this vehicle")
        self.ltc = ltc

    def start_acquisition(
        self, period: int, pca_id: str, key_count: int, requested_start: Optional[int] = None
    ) -> Acquisition:
        return Acquisition(self, period, pca_id, key_count, requested_start)

    def install(
        self,
        pseudonyms: list[Pseudonym],
        keys: list[crypto.KeyPair],
        now: float,
        pool: Optional[PseudonymPool] = None,
    ) -> list[Pseudonym]:
        if len(pseudonyms) != len(keys):
            raise VpkiError("invalid-response", "pseudonym count does not match key count")
        for p, k in zip(pseudonyms, keys):
            if p.public_key != k.public_key:
                raise VpkiError("invalid-response", "pseudonym binds a foreign key")
            verify_chain(p, self.trust_store, now, check_leaf_validity=False, memo=self._chain_memo)
        (self.pool if pool is None else pool).add(list(zip(pseudonyms, keys)))
        return pseudonyms

    def refill(
        self,
        target_period: int,
        pca_choice: str,
        key_count: int,
        now: float,
        ltca: Endpoint,
        pca: Endpoint,
        requested_start: Optional[int] = None,
    ) -> list[Pseudonym]:
        """Obtain a token for ``target_period`` and pseudonyms from ``pca_choice``."""
        acq = self.start_acquisition(target_period, pca_choice, key_count, requested_start)
        ltca_key = self.trust_store.public_key(ltca.authority_id)
        acq.on_token_response(ltca.exchange(acq.token_request(ltca_key, now), now))
        pca_key = self.trust_store.public_key(pca_choice)
        return acq.on_pseudonym_response(pca.exchange(acq.pseudonym_request(pca_key, now), now), now)

    # beaconing

    def current_pseudonym(self, now: float) -> Optional[tuple[Pseudonym, crypto.KeyPair]]:
        return self.pool.current(now)

    def sign_beacon(
        self, payload: bytes, position: tuple[float, float], now: float, pool: Optional[PseudonymPool] = None
    ) -> Beacon:
        entry = (self.pool if pool is None else pool).current(now)
        if entry is None:
            self.stats["no-valid-pseudonym"] += 1
            raise VpkiError("no-valid-pseudonym", f"{self.vehicle_id} at {now}")
        pseudonym, key = entry
        beacon = Beacon(payload, float(position[0]), float(position[1]), round(now * 1000), pseudonym)
        self.stats["signed"] += 1
        return beacon.signed(key)  # type: ignore[return-value]

    def verify_beacon(self, beacon: Beacon, now: float, tolerance: Optional[float] = None) -> None:
        try:
            verify_beacon(
                beacon,
                self.trust_store,
                self.crl_cache,
                now,
                self.tolerance if tolerance is None else tolerance,
                chain_memo=self._chain_memo,
                signature_memo=self._signature_memo,
            )
        except Rejected as exc:
            self.stats[f"rejected:{exc.code}"] += 1
            raise
        self.stats["verified"] += 1

    def process_crl(self, crl: CRL, now: float) -> bool:
        """Adopt a CRL. Returns False (and ignores it) for a stale sequence."""
        try:
            verify_chain(crl, self.trust_store, now, memo=self._chain_memo)
        except Rejected as exc:
            self.stats["crl-rejected"] += 1
            raise VpkiError("bad-signature", f"CRL from {crl.issuer_id}: {exc.code}") from exc
        cached = self.crl_cache.get(crl.issuer_id)
        if cached is not None and crl.sequence_number < cached.sequence_number:
            self.stats["crl-stale"] += 1
            return False
        self.crl_cache[crl.issuer_id] = crl
        return True
