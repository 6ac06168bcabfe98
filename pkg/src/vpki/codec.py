"""Canonical binary encoding for credentials and protocol messages.

Layout of every encoded record::

    "VPKI" | version:u8 | type:u8 | field_1 | field_2 | ...

Each field is ``length:u32be | payload`` and fields appear in the fixed order
declared by the record class, never in construction order. Unordered
collections (serial sets) are sorted before encoding, so equal objects always
encode to identical bytes and signatures can be computed over the encoding
with the ``signature`` field left out. The byte-level reference is
docs/encoding.md.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from typing import Any, ClassVar

from .errors import DecodeError

MAGIC = b"VPKI"
VERSION = 1
HEADER_SIZE = len(MAGIC) + 2

_REGISTRY: dict[int, type["Record"]] = {}


@dataclass(frozen=True)
class ValidityInterval:
    """Half-open interval ``[start, end)`` in integer seconds."""

    start: int
    end: int

    def __post_init__(self) -> None:
        if not self.start < self.end:
            raise ValueError(f"validity start {self.start} must precede end {self.end}")

    def contains(self, t: float) -> bool:
        return self.start <= t < self.end

    def overlaps(self, other: "ValidityInterval") -> bool:
        return self.start < other.end and other.start < self.end

    @property
    def duration(self) -> int:
        return self.end - self.start


_NEG_ZERO = struct.pack(">d", -0.0)


def _u32(n: int) -> bytes:
    return struct.pack(">I", n)


def _pack_list(items: list[bytes]) -> bytes:
    return b"".join(_u32(len(b)) + b for b in items)


def _unpack_list(payload: bytes) -> list[bytes]:
    out: list[bytes] = []
    pos = 0
    while pos < len(payload):
        if pos + 4 > len(payload):
            raise DecodeError("truncated list item length")
        (n,) = struct.unpack_from(">I", payload, pos)
        pos += 4
        if pos + n > len(payload):
            raise DecodeError("truncated list item")
        out.append(payload[pos:pos + n])
        pos += n
    return out


def _encode_value(kind: str, value: Any) -> bytes:
    if kind == "bytes":
        return bytes(value)
    if kind == "str":
        return value.encode("utf-8")
    if kind == "int":
        return struct.pack(">q", value)
    if kind == "opt_int":
        return b"" if value is None else struct.pack(">q", value)
    if kind == "float":
        if value != value:
            raise ValueError("NaN has no canonical encoding")
        # -0.0 == 0.0, so both must encode the same way
        return struct.pack(">d", value + 0.0)
    if kind == "validity":
        return struct.pack(">qq", value.start, value.end)
    if kind == "role":
        return bytes([value.code])
    if kind == "serials":
        return _pack_list(sorted(value))
    if kind == "keys":
        return _pack_list(list(value))
    if kind == "obj":
        return value.encode()
    if kind == "objs":
        return _pack_list([v.encode() for v in value])
    raise TypeError(f"unknown field kind {kind!r}")


def _decode_value(kind: str, payload: bytes) -> Any:
    try:
        if kind == "bytes":
            return payload
        if kind == "str":
            return payload.decode("utf-8")
        if kind == "int":
            (v,) = struct.unpack(">q", payload)
            return v
        if kind == "opt_int":
            return None if payload == b"" else struct.unpack(">q", payload)[0]
        if kind == "float":
            (v,) = struct.unpack(">d", payload)
            if v != v or payload == _NEG_ZERO:
                raise DecodeError("float has no canonical encoding")
            return v
        if kind == "validity":
            start, end = struct.unpack(">qq", payload)
            return ValidityInterval(start, end)
        if kind == "role":
            from .credentials import Role

            if len(payload) != 1:
                raise DecodeError("role must be one byte")
            return Role.from_code(payload[0])
        if kind == "serials":
            items = _unpack_list(payload)
            if items != sorted(items) or len(set(items)) != len(items):
                raise DecodeError("serial set not in canonical order")
            return frozenset(items)
        if kind == "keys":
            return tuple(_unpack_list(payload))
        if kind == "obj":
            return decode(payload)
        if kind == "objs":
            return tuple(decode(b) for b in _unpack_list(payload))
    except (struct.error, UnicodeDecodeError, ValueError) as exc:
        raise DecodeError(f"bad {kind} field: {exc}") from exc
    raise TypeError(f"unknown field kind {kind!r}")


class Record:
    """Mixin for frozen dataclasses with a canonical encoding.

    Subclasses declare ``TYPE_CODE`` and ``FIELDS`` (name, kind) in canonical
    order. A field named ``signature`` is excluded from :meth:`tbs`.
    """

    TYPE_CODE: ClassVar[int]
    FIELDS: ClassVar[tuple[tuple[str, str], ...]]

    def __init_subclass__(cls, **kwargs: Any) -> None:
        super().__init_subclass__(**kwargs)
        code = cls.__dict__.get("TYPE_CODE")
        if code is not None:
            if code in _REGISTRY:
                raise TypeError(f"type code {code} already used by {_REGISTRY[code].__name__}")
            _REGISTRY[code] = cls

    def _encode(self, skip_signature: bool) -> bytes:
        parts = [MAGIC, bytes([VERSION, self.TYPE_CODE])]
        for name, kind in self.FIELDS:
            if skip_signature and name == "signature":
                continue
            payload = _encode_value(kind, getattr(self, name))
            parts.append(_u32(len(payload)))
            parts.append(payload)
        return b"".join(parts)

    def _cached(self, key: str, skip_signature: bool) -> bytes:
        # records are frozen, so the encoding can be kept on the instance
        cache = self.__dict__
        if key not in cache:
            cache[key] = self._encode(skip_signature)
        return cache[key]

    def encode(self) -> bytes:
        return self._cached("_encoding", False)

    def tbs(self) -> bytes:
        """Bytes covered by the signature."""
        return self._cached("_tbs", True)

    def signed(self, key) -> "Record":
        from . import crypto

        return replace(self, signature=crypto.sign(self.tbs(), key))  # type: ignore[type-var]

    @classmethod
    def decode(cls, data: bytes) -> "Record":
        obj = decode(data)
        if cls is not Record and not isinstance(obj, cls):
            raise DecodeError(f"expected {cls.__name__}, got {type(obj).__name__}")
        return obj


def decode(data: bytes) -> Record:
    """Decode any registered record; rejects truncation and trailing bytes."""
    data = bytes(data)
    if len(data) < HEADER_SIZE or data[:4] != MAGIC:
        raise DecodeError("missing VPKI header")
    if data[4] != VERSION:
        raise DecodeError(f"unsupported version {data[4]}")
    cls = _REGISTRY.get(data[5])
    if cls is None:
        raise DecodeError(f"unknown type code {data[5]}")
    pos = HEADER_SIZE
    values: dict[str, Any] = {}
    signature_span = None
    for name, kind in cls.FIELDS:
        if pos + 4 > len(data):
            raise DecodeError(f"truncated before field {name}")
        (n,) = struct.unpack_from(">I", data, pos)
        if name == "signature":
            signature_span = (pos, pos + 4 + n)
        pos += 4
        if pos + n > len(data):
            raise DecodeError(f"truncated field {name}")
        values[name] = _decode_value(kind, data[pos:pos + n])
        pos += n
    if pos != len(data):
        raise DecodeError(f"{len(data) - pos} trailing bytes")
    try:
        obj = cls(**values)  # type: ignore[call-arg]
    except (TypeError, ValueError) as exc:
        raise DecodeError(str(exc)) from exc
    # every accepted input is canonical, so the input bytes are the encoding
    obj.__dict__["_encoding"] = data
    if signature_span is not None:
        obj.__dict__["_tbs"] = data[:signature_span[0]] + data[signature_span[1]:]
    return obj
