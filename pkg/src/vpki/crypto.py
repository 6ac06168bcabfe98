"""Elliptic-curve primitives over NIST P-256.

ECDSA signatures use RFC 6979 deterministic nonces, so a seeded key signs
the same message to the same bytes on every run. Confidential transport uses
an ECIES construction: ephemeral ECDH, HKDF-SHA256, then AES-128-CCM.

Fixed-width encodings (see docs/encoding.md):

* public key: 33 bytes, SEC1 compressed point
* signature: 64 bytes, ``r || s`` big-endian
* digest: 32 bytes, SHA-256
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass
from functools import lru_cache

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.hazmat.primitives.asymmetric.utils import (
    decode_dss_signature,
    encode_dss_signature,
)
from cryptography.hazmat.primitives.ciphers.aead import AESCCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .errors import CryptoError

CURVE = ec.SECP256R1()
# group order of P-256
CURVE_ORDER = 0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551

PUBLIC_KEY_SIZE = 33
SIGNATURE_SIZE = 64
DIGEST_SIZE = 32
TAG_SIZE = 16

_ECDSA = ec.ECDSA(hashes.SHA256(), deterministic_signing=True)
_ENVELOPE_INFO = b"vpki-envelope-v1"


@dataclass(frozen=True)
class KeyPair:
    private_key: ec.EllipticCurvePrivateKey
    public_key: bytes

    def __repr__(self) -> str:
        return f"KeyPair(public_key={self.public_key.hex()})"

    def private_bytes(self) -> bytes:
        """32-byte big-endian scalar, for key files only."""
        return self.private_key.private_numbers().private_value.to_bytes(32, "big")

    @classmethod
    def from_private_bytes(cls, raw: bytes) -> "KeyPair":
        if len(raw) != 32:
            raise CryptoError("malformed-key", "private scalar must be 32 bytes")
        return _keypair_from_scalar(int.from_bytes(raw, "big"))


@dataclass(frozen=True)
class SealedEnvelope:
    ephemeral_public: bytes
    ciphertext: bytes
    auth_tag: bytes

    def to_bytes(self) -> bytes:
        return self.ephemeral_public + self.ciphertext + self.auth_tag

    @classmethod
    def from_bytes(cls, data: bytes) -> "SealedEnvelope":
        if len(data) < PUBLIC_KEY_SIZE + TAG_SIZE:
            raise CryptoError("envelope-rejected", "envelope too short")
        return cls(
            data[:PUBLIC_KEY_SIZE],
            data[PUBLIC_KEY_SIZE:-TAG_SIZE],
            data[-TAG_SIZE:],
        )


def _seed_bytes(seed: int | bytes | str) -> bytes:
    if isinstance(seed, bytes):
        return seed
    if isinstance(seed, str):
        return seed.encode()
    return seed.to_bytes((seed.bit_length() + 8) // 8 or 1, "big", signed=True)


def _keypair_from_scalar(scalar: int) -> KeyPair:
    if not 0 < scalar < CURVE_ORDER:
        raise CryptoError("malformed-key", "scalar out of range")
    priv = ec.derive_private_key(scalar, CURVE)
    return KeyPair(priv, encode_public_key(priv.public_key()))


def generate_keypair(seed: int | bytes | str | None = None) -> KeyPair:
    """Create a P-256 key pair.

    With ``seed`` the scalar is derived by hashing the seed, so equal seeds
    give bit-identical keys. Without a seed the OS entropy pool is used.
    """
    if seed is None:
        try:
            material = os.urandom(48)
        except NotImplementedError as exc:  # pragma: no cover
            raise CryptoError("entropy-failure", str(exc)) from exc
    else:
        material = hashlib.sha512(b"vpki-keygen\x00" + _seed_bytes(seed)).digest()
    # 384 bits reduced mod n keeps the bias negligible
    scalar = int.from_bytes(material[:48], "big") % (CURVE_ORDER - 1) + 1
    return _keypair_from_scalar(scalar)


def encode_public_key(key: ec.EllipticCurvePublicKey) -> bytes:
    return key.public_bytes(
        serialization.Encoding.X962, serialization.PublicFormat.CompressedPoint
    )


@lru_cache(maxsize=8192)
def load_public_key(data: bytes) -> ec.EllipticCurvePublicKey:
    """Decode a compressed point. Cached: point decompression is not cheap."""
    if len(data) != PUBLIC_KEY_SIZE:
        raise CryptoError("malformed-key", f"public key must be {PUBLIC_KEY_SIZE} bytes")
    try:
        return ec.EllipticCurvePublicKey.from_encoded_point(CURVE, data)
    except ValueError as exc:
        raise CryptoError("malformed-key", str(exc)) from exc


def _private(key: KeyPair | ec.EllipticCurvePrivateKey) -> ec.EllipticCurvePrivateKey:
    if isinstance(key, KeyPair):
        return key.private_key
    if isinstance(key, ec.EllipticCurvePrivateKey):
        return key
    raise CryptoError("malformed-key", f"not a private key: {type(key).__name__}")


def sign(message: bytes, key: KeyPair | ec.EllipticCurvePrivateKey) -> bytes:
    der = _private(key).sign(message, _ECDSA)
    r, s = decode_dss_signature(der)
    return r.to_bytes(32, "big") + s.to_bytes(32, "big")


def verify(message: bytes, signature: bytes, public_key: bytes) -> bool:
    if len(signature) != SIGNATURE_SIZE:
        return False
    try:
        pub = load_public_key(public_key)
    except CryptoError:
        return False
    r = int.from_bytes(signature[:32], "big")
    s = int.from_bytes(signature[32:], "big")
    if not (0 < r < CURVE_ORDER and 0 < s < CURVE_ORDER):
        return False
    try:
        pub.verify(encode_dss_signature(r, s), message, _ECDSA)
    except InvalidSignature:
        return False
    return True


def digest(message: bytes) -> bytes:
    return hashlib.sha256(message).digest()


# 12-byte CCM nonce leaves a 3-byte length field: payloads up to 16 MiB
def _envelope_keys(shared: bytes, ephemeral_public: bytes, recipient: bytes) -> tuple[bytes, bytes]:
    okm = HKDF(
        algorithm=hashes.SHA256(),
        length=16 + 12,
        salt=ephemeral_public + recipient,
        info=_ENVELOPE_INFO,
    ).derive(shared)
    return okm[:16], okm[16:]


def seal(message: bytes, recipient: bytes, seed: int | bytes | str | None = None) -> SealedEnvelope:
    """Encrypt ``message`` to the holder of ``recipient``'s private key.

    A fresh ephemeral key is drawn per envelope; pass ``seed`` to make the
    ephemeral key (and thus the whole envelope) reproducible.
    """
    peer = load_public_key(recipient)
    eph = generate_keypair(None if seed is None else b"seal\x00" + _seed_bytes(seed))
    shared = eph.private_key.exchange(ec.ECDH(), peer)
    key, nonce = _envelope_keys(shared, eph.public_key, recipient)
    sealed = AESCCM(key, tag_length=TAG_SIZE).encrypt(nonce, message, eph.public_key)
    return SealedEnvelope(eph.public_key, sealed[:-TAG_SIZE], sealed[-TAG_SIZE:])


def open_envelope(envelope: SealedEnvelope | bytes, key: KeyPair) -> bytes:
    """Decrypt an envelope; any tampering or a wrong key raises CryptoError."""
    if isinstance(envelope, bytes):
        envelope = SealedEnvelope.from_bytes(envelope)
    try:
        peer = load_public_key(envelope.ephemeral_public)
    except CryptoError as exc:
        raise CryptoError("envelope-rejected", "bad ephemeral key") from exc
    shared = key.private_key.exchange(ec.ECDH(), peer)
    k, nonce = _envelope_keys(shared, envelope.ephemeral_public, key.public_key)
    try:
        return AESCCM(k, tag_length=TAG_SIZE).decrypt(
            nonce, envelope.ciphertext + envelope.auth_tag, envelope.ephemeral_public
        )
    except InvalidTag as exc:
        raise CryptoError("envelope-rejected", "authentication tag mismatch") from exc
