"""Exception types shared across the package.

Every failure carries a short machine-readable ``code`` (for example
``duplicate-period-request`` or ``token-replayed``). The wire protocol ships
codes across process boundaries, so callers should branch on ``exc.code``
rather than on the exception class.
"""

from __future__ import annotations


class VpkiError(Exception):
    """Base error with a stable ``code`` string."""

    def __init__(self, code: str, message: str = "") -> None:
        super().__init__(f"{code}: {message}" if message else code)
        self.code = code
        self.message = message


class CryptoError(VpkiError):
    pass


class DecodeError(VpkiError):
    def __init__(self, message: str) -> None:
        super().__init__("decode-error", message)


class Rejected(VpkiError):
    """A credential or beacon failed verification.

    ``code`` is one of the enumerated rejection reasons, e.g. ``expired``,
    ``role-violation`` or ``stale``.
    """


class AuthorityUnreachable(VpkiError):
    def __init__(self, authority_id: str) -> None:
        super().__init__("authority-unreachable", authority_id)
        self.authority_id = authority_id
