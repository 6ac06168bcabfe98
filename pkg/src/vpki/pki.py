"""Build an authority hierarchy from a trust topology.

The root (RCA) certifies K HCAs; LTCAs and PCAs are certified by the HCAs in
round-robin order (or by the root when K = 0). One RA is certified by the
root. Keys are derived from the seed when one is given.
"""

from __future__ import annotations

import json
import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import crypto
from .codec import ValidityInterval, decode
from .credentials import (
    AuthorityCertificate,
    PolicyFile,
    Role,
    TrustStore,
    TrustTopology,
    issue_authority_certificate,
)
from .errors import VpkiError
from .ltca import LTCA
from .pca import PCA
from .policy import SlotGrid
from .resolution import ResolutionAuthority

ROOT_ID = "RCA"
RA_ID = "RA-1"
AUTHORITY_LIFETIME = 20 * 365 * 86400


def ltca_ids(topology: TrustTopology) -> list[str]:
    return [f"LTCA-{i + 1}" for i in range(topology.ltca_count)]


def pca_ids(topology: TrustTopology) -> list[str]:
    return [f"PCA-{i + 1}" for i in range(topology.pca_count)]


@dataclass
class Hierarchy:
    topology: TrustTopology
    grid: SlotGrid
    trust_store: TrustStore
    policy: PolicyFile
    keys: dict[str, crypto.KeyPair] = field(repr=False, default_factory=dict)
    certificates: dict[str, AuthorityCertificate] = field(default_factory=dict)
    seed: Optional[str] = None

    @property
    def ltca_ids(self) -> list[str]:
        return ltca_ids(self.topology)

    @property
    def pca_ids(self) -> list[str]:
        return pca_ids(self.topology)

    def rng(self, authority_id: str) -> Optional[random.Random]:
        return None if self.seed is None else random.Random(f"{self.seed}/rng/{authority_id}")

    def ltca(self, authority_id: str, **kwargs) -> LTCA:
        return LTCA(
            authority_id, self.keys[authority_id], self.certificates[authority_id],
            self.trust_store, self.grid, rng=self.rng(authority_id), **kwargs,
        )

    def pca(self, authority_id: str, **kwargs) -> PCA:
        return PCA(
            authority_id, self.keys[authority_id], self.certificates[authority_id],
            self.trust_store, self.grid, rng=self.rng(authority_id), **kwargs,
        )

    def ra(self, pcas, ltcas, **kwargs) -> ResolutionAuthority:
        return ResolutionAuthority(
            RA_ID, self.keys[RA_ID], self.certificates[RA_ID],
            self.trust_store, pcas, ltcas, rng=self.rng(RA_ID), **kwargs,
        )

    def save(self, path: Path | str) -> None:
        """Write the trust store, policy file and (private) key file."""
        path = Path(path)
        self.trust_store.to_directory(path / "trust")
        (path / "policy.bin").write_bytes(self.policy.encode())
        keys = {aid: kp.private_bytes().hex() for aid, kp in sorted(self.keys.items())}
        (path / "keys.json").write_text(json.dumps(keys, indent=1, sort_keys=True))
        (path / "topology.json").write_text(json.dumps({
            "K": self.topology.hca_count, "L": self.topology.ltca_count, "M": self.topology.pca_count,
        }))

    @classmethod
    def load(cls, path: Path | str, now: Optional[float] = None) -> "Hierarchy":
        """Read a saved hierarchy; the policy chain is checked at ``now`` (default: wall clock)."""
        path = Path(path)
        store = TrustStore.from_directory(path / "trust")
        policy = decode((path / "policy.bin").read_bytes())
        if not isinstance(policy, PolicyFile):
            raise VpkiError("invalid-policy", "policy.bin is not a policy file")
        grid = SlotGrid.from_policy(policy, store, time.time() if now is None else now)
        topo = json.loads((path / "topology.json").read_text())
        keys = {
            aid: crypto.KeyPair.from_private_bytes(bytes.fromhex(h))
            for aid, h in json.loads((path / "keys.json").read_text()).items()
        }
        certs = {}
        for aid, kp in keys.items():
            for cert in store.certificates_for(aid):
                if cert.public_key == kp.public_key and not (cert.self_signed and aid != ROOT_ID):
                    certs.setdefault(aid, cert)
        return cls(TrustTopology(topo["K"], topo["L"], topo["M"]), grid, store, policy, keys, certs)


def build_hierarchy(
    topology: TrustTopology,
    grid: SlotGrid = SlotGrid(),
    seed: Optional[object] = None,
    start: int = 0,
) -> Hierarchy:
    """Create keys and certificates for RCA, HCAs, LTCAs, PCAs and one RA."""
    tag = None if seed is None else str(seed)
    validity = ValidityInterval(start - AUTHORITY_LIFETIME, start + AUTHORITY_LIFETIME)

    def key(aid: str) -> crypto.KeyPair:
        return crypto.generate_keypair(None if tag is None else f"{tag}/authority/{aid}")

    keys = {ROOT_ID: key(ROOT_ID)}
    certs = {
        ROOT_ID: issue_authority_certificate(
            ROOT_ID, Role.RCA, keys[ROOT_ID].public_key, validity, ROOT_ID, keys[ROOT_ID]
        )
    }
    extra: list[AuthorityCertificate] = []

    def certify(aid: str, role: Role, issuer: str) -> None:
        keys[aid] = key(aid)
        certs[aid] = issue_authority_certificate(aid, role, keys[aid].public_key, validity, issuer, keys[issuer])

    hcas = [f"HCA-{i + 1}" for i in range(topology.hca_count)]
    for h in hcas:
        certify(h, Role.HCA, ROOT_ID)
    parents = hcas or [ROOT_ID]
    for i, aid in enumerate(ltca_ids(topology)):
        certify(aid, Role.LTCA, parents[i % len(parents)])
    for i, aid in enumerate(pca_ids(topology)):
        certify(aid, Role.PCA, parents[i % len(parents)])
    certify(RA_ID, Role.RA, ROOT_ID)

    for issuer, subject in sorted(topology.cross_certifications):
        if issuer not in keys or subject not in certs:
            raise VpkiError("invalid-topology", f"cross-certification {issuer} -> {subject}")
        s = certs[subject]
        extra.append(issue_authority_certificate(subject, s.role, s.public_key, validity, issuer, keys[issuer]))

    store = TrustStore(list(certs.values()) + extra)
    policy = grid.to_policy(ROOT_ID, keys[ROOT_ID])
    return Hierarchy(topology, grid, store, policy, keys, certs, tag)
