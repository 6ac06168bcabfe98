"""Certificates, tokens, CRLs and chain validation.

Every credential is an immutable :class:`~vpki.codec.Record`; its signature
covers the canonical encoding of all other fields. A :class:`TrustStore` is an
immutable snapshot of authority certificates; replacing it is how trust is
updated.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, MutableMapping, Optional, Union

from . import crypto
from .codec import Record, ValidityInterval, decode
from .errors import Rejected, VpkiError

__all__ = [
    "AuthorityCertificate",
    "CRL",
    "LongTermCertificate",
    "PolicyFile",
    "Pseudonym",
    "Role",
    "Token",
    "TrustStore",
    "TrustTopology",
    "ValidityInterval",
    "verify_chain",
    "REJECT_REASONS",
]

REJECT_REASONS = (
    "bad-signature",
    "expired",
    "not-yet-valid",
    "revoked",
    "role-violation",
    "no-path-to-root",
)


class Role(enum.Enum):
    RCA = 1
    HCA = 2
    LTCA = 3
    PCA = 4
    RA = 5

    @property
    def code(self) -> int:
        return self.value

    @classmethod
    def from_code(cls, code: int) -> "Role":
        return cls(code)


@dataclass(frozen=True)
class AuthorityCertificate(Record):
    TYPE_CODE = 1
    FIELDS = (
        ("authority_id", "str"),
        ("role", "role"),
        ("public_key", "bytes"),
        ("validity", "validity"),
        ("issuer_id", "str"),
        ("signature", "bytes"),
    )

    authority_id: str
    role: Role
    public_key: bytes
    validity: ValidityInterval
    issuer_id: str
    signature: bytes = b""

    @property
    def serial(self) -> bytes:
        return self.authority_id.encode()

    @property
    def self_signed(self) -> bool:
        return self.issuer_id == self.authority_id


@dataclass(frozen=True)
class LongTermCertificate(Record):
    TYPE_CODE = 2
    FIELDS = (
        ("serial", "bytes"),
        ("vehicle_id", "str"),
        ("public_key", "bytes"),
        ("issuer_id", "str"),
        ("validity", "validity"),
        ("signature", "bytes"),
    )

    serial: bytes
    vehicle_id: str
    public_key: bytes
    issuer_id: str
    validity: ValidityInterval
    signature: bytes = b""


@dataclass(frozen=True)
class Pseudonym(Record):
    """Short-term certificate. Deliberately carries no vehicle identity."""

    TYPE_CODE = 3
    FIELDS = (
        ("serial", "bytes"),
        ("public_key", "bytes"),
        ("validity", "validity"),
        ("issuer_id", "str"),
        ("signature", "bytes"),
    )

    serial: bytes
    public_key: bytes
    validity: ValidityInterval
    issuer_id: str
    signature: bytes = b""


@dataclass(frozen=True)
class Token(Record):
    """Single-use LTCA authorization for one pseudonym request.

    ``pca_binding`` is ``digest(pca_id || salt)``: the LTCA signs it without
    learning which PCA the vehicle will visit.
    """

    TYPE_CODE = 4
    FIELDS = (
        ("serial", "bytes"),
        ("pca_binding", "bytes"),
        ("period_tag", "int"),
        ("validity", "validity"),
        ("issuer_id", "str"),
        ("signature", "bytes"),
    )

    serial: bytes
    pca_binding: bytes
    period_tag: int
    validity: ValidityInterval
    issuer_id: str
    signature: bytes = b""


@dataclass(frozen=True)
class CRL(Record):
    """Full (non-delta) revocation list."""

    TYPE_CODE = 5
    FIELDS = (
        ("issuer_id", "str"),
        ("sequence_number", "int"),
        ("issued_at", "int"),
        ("revoked_serials", "serials"),
        ("signature", "bytes"),
    )

    issuer_id: str
    sequence_number: int
    issued_at: int
    revoked_serials: frozenset = field(default_factory=frozenset)
    signature: bytes = b""

    @property
    def serial(self) -> bytes:
        return f"{self.issuer_id}#{self.sequence_number}".encode()


@dataclass(frozen=True)
class PolicyFile(Record):
    """Root-signed slot grid shared by every LTCA and PCA."""

    TYPE_CODE = 6
    FIELDS = (
        ("issuer_id", "str"),
        ("epoch_origin", "int"),
        ("slot_duration", "int"),
        ("period_length", "int"),
        ("signature", "bytes"),
    )

    issuer_id: str
    epoch_origin: int
    slot_duration: int
    period_length: int
    signature: bytes = b""

    @property
    def serial(self) -> bytes:
        return b"policy"


Credential = Union[AuthorityCertificate, LongTermCertificate, Pseudonym, Token, CRL, PolicyFile]

# which issuer roles may sign which credential type
ISSUER_ROLES: dict[type, frozenset[Role]] = {
    Pseudonym: frozenset({Role.PCA}),
    LongTermCertificate: frozenset({Role.LTCA}),
    Token: frozenset({Role.LTCA}),
    CRL: frozenset({Role.LTCA, Role.PCA, Role.RCA, Role.HCA}),
    PolicyFile: frozenset({Role.RCA}),
    AuthorityCertificate: frozenset({Role.RCA, Role.HCA}),
}


def _role_allowed(cred: Credential, issuer: AuthorityCertificate) -> bool:
    if issuer.role not in ISSUER_ROLES[type(cred)]:
        return False
    if isinstance(cred, AuthorityCertificate) and issuer.role is Role.HCA:
        # HCAs bridge parts of the hierarchy but never mint roots
        return cred.role is not Role.RCA
    return True


@dataclass(frozen=True)
class TrustTopology:
    hca_count: int
    ltca_count: int
    pca_count: int
    cross_certifications: frozenset = frozenset()

    def __post_init__(self) -> None:
        if min(self.ltca_count, self.pca_count) < 1 or self.hca_count < 0:
            raise VpkiError("invalid-topology", "need at least one LTCA and one PCA")
        if not self.hca_count <= self.ltca_count <= self.pca_count:
            raise VpkiError(
                "invalid-topology",
                f"require K <= L <= M, got {self.hca_count}, {self.ltca_count}, {self.pca_count}",
            )


class TrustStore:
    """Immutable set of authority certificates.

    Trust anchors are the self-signed RCA certificates present in the store.
    """

    def __init__(self, certificates: Iterable[AuthorityCertificate] = ()) -> None:
        by_id: dict[str, list[AuthorityCertificate]] = {}
        for cert in certificates:
            bucket = by_id.setdefault(cert.authority_id, [])
            if cert not in bucket:
                bucket.append(cert)
        self._by_id = {k: tuple(v) for k, v in by_id.items()}

    def __iter__(self):
        for certs in self._by_id.values():
            yield from certs

    def __len__(self) -> int:
        return sum(len(v) for v in self._by_id.values())

    def __contains__(self, cert: object) -> bool:
        return isinstance(cert, AuthorityCertificate) and cert in self._by_id.get(cert.authority_id, ())

    def certificates_for(self, authority_id: str) -> tuple[AuthorityCertificate, ...]:
        return self._by_id.get(authority_id, ())

    def certificate(self, authority_id: str) -> AuthorityCertificate:
        certs = self._by_id.get(authority_id)
        if not certs:
            raise VpkiError("unknown-authority", authority_id)
        return certs[0]

    def public_key(self, authority_id: str) -> bytes:
        return self.certificate(authority_id).public_key

    def ids(self, role: Optional[Role] = None) -> list[str]:
        return sorted(
            aid for aid, certs in self._by_id.items() if role is None or any(c.role is role for c in certs)
        )

    def with_certificates(self, certs: Iterable[AuthorityCertificate]) -> "TrustStore":
        return TrustStore([*self, *certs])

    def without(self, cert: AuthorityCertificate) -> "TrustStore":
        return TrustStore(c for c in self if c != cert)

    def to_directory(self, path: Path | str) -> None:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        for cert in self:
            name = f"{cert.authority_id}__{cert.issuer_id}.cert"
            (path / name).write_bytes(cert.encode())

    @classmethod
    def from_directory(cls, path: Path | str) -> "TrustStore":
        certs = []
        for file in sorted(Path(path).glob("*.cert")):
            obj = decode(file.read_bytes())
            if not isinstance(obj, AuthorityCertificate):
                raise VpkiError("bad-trust-store", f"{file.name} is not an authority certificate")
            certs.append(obj)
        return cls(certs)


SignatureMemo = MutableMapping[tuple, bool]


def signature_ok(
    message: bytes, signature: bytes, public_key: bytes, memo: Optional[SignatureMemo] = None
) -> bool:
    """Verify a signature, optionally memoised by the caller.

    The result is a pure function of the three inputs, so a verifier may keep
    its own memo for credentials it sees repeatedly (authority certificates,
    pseudonyms of neighbours).
    """
    if memo is None:
        return crypto.verify(message, signature, public_key)
    key = (crypto.digest(message), signature, public_key)
    ok = memo.get(key)
    if ok is None:
        ok = memo[key] = crypto.verify(message, signature, public_key)
    return ok


def verify_chain(
    credential: Credential,
    trust_store: TrustStore,
    now: float,
    crls: Optional[Mapping[str, CRL]] = None,
    *,
    check_leaf_validity: bool = True,
    memo: Optional[SignatureMemo] = None,
) -> None:
    """Validate ``credential`` up to a trust anchor, raising :class:`Rejected`.

    Accepts iff every link's signature verifies, every link is inside its
    validity at ``now``, issuer roles are permitted for what they sign, and
    no link's serial is on the cached CRL of its issuer. With several
    candidate issuer certificates (cross-certification) any one valid path
    suffices; the reason reported is that of the last path tried.
    """
    _verify(credential, trust_store, now, crls or {}, check_leaf_validity, memo, frozenset())


def _verify(cred, store, now, crls, check_validity, memo, seen) -> None:
    validity = getattr(cred, "validity", None)
    if check_validity and validity is not None:
        if now < validity.start:
            raise Rejected("not-yet-valid", repr(cred.serial))
        if now >= validity.end:
            raise Rejected("expired", repr(cred.serial))
    issuer_crl = crls.get(cred.issuer_id)
    if issuer_crl is not None and cred.serial in issuer_crl.revoked_serials and not isinstance(cred, CRL):
        raise Rejected("revoked", repr(cred.serial))

    if isinstance(cred, AuthorityCertificate) and cred.self_signed:
        if cred.role is Role.RCA and cred in store:
            if not signature_ok(cred.tbs(), cred.signature, cred.public_key, memo):
                raise Rejected("bad-signature", f"root {cred.authority_id}")
            return
        raise Rejected("no-path-to-root", f"untrusted self-signed {cred.authority_id}")

    candidates = store.certificates_for(cred.issuer_id)
    reason = "no-path-to-root"
    for issuer in candidates:
        ident = (issuer.authority_id, issuer.issuer_id, issuer.public_key)
        if ident in seen:
            continue
        if not _role_allowed(cred, issuer):
            reason = "role-violation"
            continue
        if not signature_ok(cred.tbs(), cred.signature, issuer.public_key, memo):
            reason = "bad-signature"
            continue
        try:
            _verify(issuer, store, now, crls, True, memo, seen | {ident})
            return
        except Rejected as exc:
            reason = exc.code
    raise Rejected(reason, f"issuer {cred.issuer_id}")


def issue_authority_certificate(
    authority_id: str,
    role: Role,
    public_key: bytes,
    validity: ValidityInterval,
    issuer_id: str,
    issuer_key: crypto.KeyPair,
) -> AuthorityCertificate:
    cert = AuthorityCertificate(authority_id, role, public_key, validity, issuer_id)
    return cert.signed(issuer_key)  # type: ignore[return-value]
