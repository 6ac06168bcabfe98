"""Protocol messages exchanged between vehicles and authorities.

All request bodies travel inside a :class:`Request` that is sealed to the
receiving authority; the response is sealed to ``Request.reply_key``, a
one-time key chosen by the caller. The reply key is fresh per request so it
cannot link two requests of the same vehicle.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .codec import Record
from .credentials import CRL, LongTermCertificate, Pseudonym, Token


@dataclass(frozen=True)
class Request(Record):
    TYPE_CODE = 16
    FIELDS = (("body", "obj"), ("reply_key", "bytes"))

    body: Record
    reply_key: bytes


@dataclass(frozen=True)
class TokenRequest(Record):
    """Signed with the vehicle's long-term key."""

    TYPE_CODE = 17
    FIELDS = (
        ("ltc", "obj"),
        ("pca_binding", "bytes"),
        ("period_tag", "int"),
        ("timestamp", "int"),
        ("signature", "bytes"),
    )

    ltc: LongTermCertificate
    pca_binding: bytes
    period_tag: int
    timestamp: int
    signature: bytes = b""


@dataclass(frozen=True)
class TokenResponse(Record):
    TYPE_CODE = 18
    FIELDS = (("token", "obj"),)

    token: Token


@dataclass(frozen=True)
class PseudonymRequest(Record):
    """Anonymous: the token is the only authorization.

    ``requested_start`` is honoured only by PCAs running the legacy
    flexible-lifetime policy; grid PCAs ignore it.
    """

    TYPE_CODE = 19
    FIELDS = (
        ("token", "obj"),
        ("salt", "bytes"),
        ("public_keys", "keys"),
        ("requested_start", "opt_int"),
    )

    token: Token
    salt: bytes
    public_keys: tuple
    requested_start: Optional[int] = None


@dataclass(frozen=True)
class PseudonymResponse(Record):
    TYPE_CODE = 20
    FIELDS = (("pseudonyms", "objs"),)

    pseudonyms: tuple


@dataclass(frozen=True)
class ErrorResponse(Record):
    TYPE_CODE = 21
    FIELDS = (("code", "str"), ("message", "str"))

    code: str
    message: str = ""


@dataclass(frozen=True)
class AuthorizationOrder(Record):
    """An RA-signed instruction to resolve or revoke.

    ``action`` is one of ``resolve-pseudonym``, ``resolve-token``,
    ``revoke-token``, ``revoke-pseudonym`` or ``revoke-vehicle``.
    """

    TYPE_CODE = 22
    FIELDS = (
        ("order_id", "bytes"),
        ("action", "str"),
        ("target", "bytes"),
        ("ra_id", "str"),
        ("issued_at", "int"),
        ("signature", "bytes"),
    )

    order_id: bytes
    action: str
    target: bytes
    ra_id: str
    issued_at: int
    signature: bytes = b""


@dataclass(frozen=True)
class ResolutionAnswer(Record):
    TYPE_CODE = 23
    FIELDS = (
        ("order_id", "bytes"),
        ("token_serial", "bytes"),
        ("ltca_id", "str"),
        ("vehicle_id", "str"),
    )

    order_id: bytes
    token_serial: bytes = b""
    ltca_id: str = ""
    vehicle_id: str = ""


@dataclass(frozen=True)
class CrlRequest(Record):
    TYPE_CODE = 24
    FIELDS = (("issuer_id", "str"),)

    issuer_id: str


@dataclass(frozen=True)
class CrlResponse(Record):
    TYPE_CODE = 25
    FIELDS = (("crl", "obj"),)

    crl: CRL


@dataclass(frozen=True)
class Beacon(Record):
    """A CAM: time- and geo-stamped, signed under the attached pseudonym."""

    TYPE_CODE = 26
    FIELDS = (
        ("payload", "bytes"),
        ("x", "float"),
        ("y", "float"),
        ("timestamp_ms", "int"),
        ("pseudonym", "obj"),
        ("signature", "bytes"),
    )

    payload: bytes
    x: float
    y: float
    timestamp_ms: int
    pseudonym: Pseudonym
    signature: bytes = b""

    @property
    def timestamp(self) -> float:
        return self.timestamp_ms / 1000.0


@dataclass(frozen=True)
class ResolveRequest(Record):
    TYPE_CODE = 27
    FIELDS = (("pseudonym", "obj"), ("justification", "str"))

    pseudonym: Pseudonym
    justification: str


@dataclass(frozen=True)
class ResolveResult(Record):
    TYPE_CODE = 28
    FIELDS = (("order_id", "bytes"), ("vehicle_id", "str"), ("token_serial", "bytes"))

    order_id: bytes
    vehicle_id: str
    token_serial: bytes
