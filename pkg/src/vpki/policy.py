"""The universal pseudonym-lifetime grid.

All PCAs issue pseudonyms whose validity is exactly one grid slot
``[origin + n*slot, origin + (n+1)*slot)``. Periods group a whole number of
slots; a token authorizes one period.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import crypto
from .codec import ValidityInterval
from .credentials import PolicyFile, TrustStore, verify_chain
from .errors import VpkiError

DEFAULT_SLOT = 600
DEFAULT_PERIOD = 86400


@dataclass(frozen=True)
class SlotGrid:
    epoch_origin: int = 0
    slot_duration: int = DEFAULT_SLOT
    period_length: int = DEFAULT_PERIOD

    def __post_init__(self) -> None:
        if self.slot_duration <= 0 or self.period_length <= 0:
            raise VpkiError("invalid-policy", "slot and period lengths must be positive")
        if self.period_length % self.slot_duration:
            raise VpkiError("invalid-policy", "period length must be a whole number of slots")

    @property
    def slots_per_period(self) -> int:
        return self.period_length // self.slot_duration

    def period_of(self, t: float) -> int:
        return math.floor((t - self.epoch_origin) / self.period_length)

    def period_interval(self, period_tag: int) -> ValidityInterval:
        start = self.epoch_origin + period_tag * self.period_length
        return ValidityInterval(start, start + self.period_length)

    def slot_of(self, t: float) -> int:
        return math.floor((t - self.epoch_origin) / self.slot_duration)

    def slot_interval(self, slot_index: int) -> ValidityInterval:
        start = self.epoch_origin + slot_index * self.slot_duration
        return ValidityInterval(start, start + self.slot_duration)

    def period_slots(self, period_tag: int, count: int) -> list[ValidityInterval]:
        """The first ``count`` slots of a period, in order."""
        if count > self.slots_per_period:
            raise VpkiError(
                "too-many-keys", f"{count} keys but only {self.slots_per_period} slots per period"
            )
        first = period_tag * self.slots_per_period
        return [self.slot_interval(first + i) for i in range(count)]

    def is_aligned(self, validity: ValidityInterval) -> bool:
        return (
            validity.duration == self.slot_duration
            and (validity.start - self.epoch_origin) % self.slot_duration == 0
        )

    def to_policy(self, issuer_id: str, key: crypto.KeyPair) -> PolicyFile:
        policy = PolicyFile(issuer_id, self.epoch_origin, self.slot_duration, self.period_length)
        return policy.signed(key)  # type: ignore[return-value]

    @classmethod
    def from_policy(cls, policy: PolicyFile, trust_store: TrustStore, now: float = 0) -> "SlotGrid":
        verify_chain(policy, trust_store, now)
        return cls(policy.epoch_origin, policy.slot_duration, policy.period_length)
