import random
from dataclasses import replace

import pytest

from conftest import NOW, World
from vpki import crypto
from vpki.codec import decode
from vpki.errors import Rejected, VpkiError
from vpki.vehicle import PseudonymPool, Vehicle

P7 = 7 * 86400


@pytest.fixture
def loaded(world):
    v = world.vehicle("V001")
    world.refill(v, 7, 10)
    return world, v


def test_refill_adds_consecutive_slots(loaded):
    _, v = loaded
    assert len(v.pool) == 10
    starts = [p.validity.start for p, _ in v.pool.entries]
    assert starts == [P7 + i * 600 for i in range(10)]
    for p, k in v.pool.entries:
        assert p.public_key == k.public_key


def test_second_refill_same_period_blocked(loaded):
    w, v = loaded
    with pytest.raises(VpkiError) as exc:
        w.refill(v, 7, 10, pid="PCA-2")
    assert exc.value.code == "duplicate-period-request"
    assert len(v.pool) == 10


def test_refill_next_period_appends(loaded):
    w, v = loaded
    w.refill(v, 8, 3)
    assert len(v.pool) == 13
    assert [p.validity.start for p, _ in v.pool.entries[-3:]] == [P7 + 86400 + i * 600 for i in range(3)]


def test_pool_conflict_on_overlap(loaded):
    w, v = loaded
    p, k = v.pool.entries[0]
    with pytest.raises(VpkiError) as exc:
        v.pool.add([(replace(p, serial=b"other"), k)])
    assert exc.value.code == "pool-conflict"


def test_current_inside_slot_three(loaded):
    _, v = loaded
    assert v.current_pseudonym(P7 + 3 * 600 + 17)[0] is v.pool.entries[3][0]


def test_current_in_gap_is_none(loaded):
    _, v = loaded
    assert v.current_pseudonym(P7 + 10 * 600 + 1) is None
    assert v.current_pseudonym(P7 - 1) is None


def test_slot_boundary_takes_later_slot(loaded):
    _, v = loaded
    assert v.current_pseudonym(P7 + 4 * 600)[0] is v.pool.entries[4][0]


def test_used_serial_never_signs_again(loaded):
    _, v = loaded
    first = v.current_pseudonym(P7 + 10)[0]
    v.current_pseudonym(P7 + 610)
    assert first.serial in v.pool.used_serials
    # going back in time must not revive it
    assert v.current_pseudonym(P7 + 20) is None


def test_sign_beacon_verified_by_fresh_verifier(loaded):
    w, v = loaded
    now = P7 + 100.25
    b = v.sign_beacon(b"cam", (12.5, -3.0), now)
    assert b.timestamp == pytest.approx(now, abs=1e-3)
    other = w.vehicle("V002")
    other.verify_beacon(decode(b.encode()), now + 0.01)
    assert other.stats["verified"] == 1


def test_sign_with_empty_pool(world):
    v = world.vehicle()
    with pytest.raises(VpkiError) as exc:
        v.sign_beacon(b"", (0, 0), NOW)
    assert exc.value.code == "no-valid-pseudonym"
    assert v.stats["no-valid-pseudonym"] == 1


def test_beacons_across_boundary_change_serial(loaded):
    _, v = loaded
    a = v.sign_beacon(b"", (0, 0), P7 + 599.9)
    b = v.sign_beacon(b"", (0, 0), P7 + 600.0)
    assert a.pseudonym.serial != b.pseudonym.serial


def test_stale_after_tolerance(loaded):
    w, v = loaded
    b = v.sign_beacon(b"", (0, 0), P7 + 100)
    rx = w.vehicle("V002")
    rx.verify_beacon(b, P7 + 102)
    with pytest.raises(Rejected) as exc:
        rx.verify_beacon(b, P7 + 102.01)
    assert exc.value.code == "stale"
    assert rx.stats["rejected:stale"] == 1


def test_revoked_only_after_crl_receipt(loaded):
    w, v = loaded
    now = P7 + 100
    b = v.sign_beacon(b"", (0, 0), now)
    rx = w.vehicle("V002")
    serial = b.pseudonym.serial
    order = w.ra.authorization("revoke-pseudonym", serial, b"o", now)
    crl = w.pca.revoke_pseudonyms(serial, order, now)
    rx.verify_beacon(b, now)  # CRL not yet received: still accepted
    assert rx.process_crl(crl, now)
    with pytest.raises(Rejected) as exc:
        rx.verify_beacon(b, now)
    assert exc.value.code == "revoked"


def test_tampered_beacon_bad_signature(loaded):
    w, v = loaded
    b = v.sign_beacon(b"payload", (1, 2), P7 + 50)
    forged = replace(b, x=99.0)
    with pytest.raises(Rejected) as exc:
        w.vehicle("V002").verify_beacon(forged, P7 + 50)
    assert exc.value.code == "bad-signature"


def test_self_made_pseudonym_bad_chain(loaded):
    w, v = loaded
    b = v.sign_beacon(b"", (0, 0), P7 + 50)
    rogue = crypto.generate_keypair(8)
    fake = replace(b.pseudonym, public_key=rogue.public_key).signed(rogue)
    forged = replace(b, pseudonym=fake).signed(rogue)
    with pytest.raises(Rejected) as exc:
        w.vehicle("V002").verify_beacon(forged, P7 + 50)
    assert exc.value.code == "bad-chain"


def test_beacon_outside_pseudonym_validity_bad_chain(loaded):
    w, v = loaded
    b = v.sign_beacon(b"", (0, 0), P7 + 50)
    key = v.pool.entries[0][1]
    late = replace(b, timestamp_ms=(P7 + 700) * 1000).signed(key)
    with pytest.raises(Rejected) as exc:
        w.vehicle("V002").verify_beacon(late, P7 + 700)
    assert exc.value.code == "bad-chain"


def test_process_crl_sequence_rules(loaded):
    w, v = loaded
    old = w.pca.publish_crl(NOW)
    new = w.pca.publish_crl(NOW + 1)
    assert v.process_crl(new, NOW)
    assert not v.process_crl(old, NOW)
    assert v.crl_cache["PCA-1"] == new
    assert v.stats["crl-stale"] == 1


def test_tampered_crl(loaded):
    w, v = loaded
    crl = w.pca.publish_crl(NOW)
    forged = replace(crl, revoked_serials=frozenset({b"x"}))
    with pytest.raises(VpkiError) as exc:
        v.process_crl(forged, NOW)
    assert exc.value.code == "bad-signature"


def test_enroll_rejects_foreign_ltc(world):
    v = world.vehicle("V001")
    other = Vehicle("V002", crypto.generate_keypair(3), world.h.trust_store, world.h.grid)
    with pytest.raises(VpkiError):
        other.enroll(v.ltc)


def test_prune_moves_to_used(loaded):
    _, v = loaded
    v.pool.prune(P7 + 2 * 600)
    assert len(v.pool) == 8
    assert len(v.pool.used_serials) == 2


def test_pool_single_entry_at_any_instant(loaded):
    _, v = loaded
    pool = v.pool
    for t in range(P7 - 10, P7 + 10 * 600 + 10, 37):
        valid = [p for p, _ in pool.entries if p.validity.contains(t)]
        assert len(valid) <= 1
        assert (pool.peek(t) is None) == (not valid)


def test_seeded_vehicles_are_reproducible():
    a, b = World(), World()
    va, vb = a.vehicle(seed=3), b.vehicle(seed=3)
    a.refill(va, 7, 2)
    b.refill(vb, 7, 2)
    assert [p.encode() for p, _ in va.pool.entries] == [p.encode() for p, _ in vb.pool.entries]


def test_empty_pool_helpers():
    pool = PseudonymPool()
    assert pool.current(0) is None and pool.coverage_end() is None
