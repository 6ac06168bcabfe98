import time

import pytest

from conftest import NOW, World
from vpki import crypto
from vpki.codec import ValidityInterval
from vpki.credentials import Pseudonym
from vpki.errors import AuthorityUnreachable, VpkiError
from vpki.resolution import RemoteAuthorityClient
from vpki.wire import FrameServer, RemoteEndpoint


def holder(w, vid="V003", count=4):
    v = w.vehicle(vid)
    w.refill(v, None, count)
    return v


def test_resolve_maps_pseudonym_to_vehicle(world):
    v = holder(world)
    p = v.pool.entries[2][0]
    vid, order = world.ra.resolve(p, "collision report", NOW)
    assert vid == "V003"
    assert order.completed and order.status == "completed"
    assert {"created", "pca", "ltca"} <= set(order.steps)
    assert crypto.verify(order.signed_bytes(), order.signature, world.h.keys["RA-1"].public_key)


def test_every_authority_logs_the_order_once(world):
    v = holder(world)
    _, order = world.ra.resolve(v.pool.entries[0][0], "audit", NOW)
    oid = order.order_id.hex()
    for log in (world.ra.audit_log, world.pca.audit_log, world.ltca.audit_log):
        assert sum(1 for e in log if e.get("order_id") == oid) == 1


def test_fabricated_serial(world):
    rogue = Pseudonym(b"\x99" * 16, crypto.generate_keypair(4).public_key, ValidityInterval(NOW, NOW + 600), "PCA-1")
    fabricated = rogue.signed(world.h.keys["PCA-1"])
    with pytest.raises(VpkiError) as exc:
        world.ra.resolve(fabricated, "x", NOW)
    assert exc.value.code == "pca-unknown-serial"


def test_unverifiable_pseudonym_rejected(world):
    rogue = crypto.generate_keypair(4)
    p = Pseudonym(b"\x99" * 16, rogue.public_key, ValidityInterval(NOW, NOW + 600), "PCA-1").signed(rogue)
    with pytest.raises(VpkiError) as exc:
        world.ra.resolve(p, "x", NOW)
    assert exc.value.code == "invalid-pseudonym"


def test_pca_offline_then_resume(tmp_path):
    w = World()
    v = holder(w)
    p = v.pool.entries[0][0]
    pcas = dict(w.ra.pcas)
    w.ra.pcas = {}
    w.ra.journal = tmp_path / "orders.ndjson"
    with pytest.raises(AuthorityUnreachable):
        w.ra.resolve(p, "offline", NOW)
    (order,) = w.ra.orders.values()
    assert order.status == "pending"
    # persisted before the first authority call
    assert w.ra.journal.read_text().count("pending") == 1
    w.ra.pcas = pcas
    assert w.ra.resume(order.order_id, NOW + 5) == "V003"
    assert order.completed

    # identical to an uninterrupted run
    w2 = World()
    v2 = holder(w2)
    assert w2.ra.resolve(v2.pool.entries[0][0], "online", NOW)[0] == "V003"


def test_journal_reload_resumes(tmp_path):
    w = World()
    v = holder(w)
    journal = tmp_path / "orders.ndjson"
    pcas = dict(w.ra.pcas)
    w.ra.pcas, w.ra.journal = {}, journal
    with pytest.raises(AuthorityUnreachable):
        w.ra.resolve(v.pool.entries[0][0], "crash", NOW)
    (oid,) = w.ra.orders
    restarted = w.h.ra(pcas, {"LTCA-1": w.ltca}, journal=journal)
    assert restarted.orders[oid].status == "pending"
    assert restarted.resume(oid, NOW) == "V003"


def test_unknown_order(world):
    with pytest.raises(VpkiError) as exc:
        world.ra.resume(b"nope", NOW)
    assert exc.value.code == "unknown-order"


def test_trigger_revocation(world):
    v = holder(world, count=5)
    _, order = world.ra.resolve(v.pool.entries[0][0], "misbehaviour", NOW)
    effects = world.ra.trigger_revocation(order, NOW)
    assert effects.vehicle_id == "V003"
    assert v.ltc.serial in effects.ltca_crl.revoked_serials
    assert effects.pca_crl.revoked_serials == {p.serial for p, _ in v.pool.entries if p.validity.end > NOW}
    assert world.ra.outbox == [effects.ltca_crl, effects.pca_crl]
    with pytest.raises(VpkiError) as exc:
        world.refill(v, 8, 1)
    assert exc.value.code == "revoked"


def test_trigger_on_pending_order(world):
    v = holder(world)
    world.ra.pcas, pcas = {}, world.ra.pcas
    with pytest.raises(AuthorityUnreachable):
        world.ra.resolve(v.pool.entries[0][0], "x", NOW)
    (order,) = world.ra.orders.values()
    with pytest.raises(VpkiError) as exc:
        world.ra.trigger_revocation(order, NOW)
    assert exc.value.code == "order-pending"


def test_double_trigger_is_idempotent(world):
    v = holder(world)
    _, order = world.ra.resolve(v.pool.entries[0][0], "x", NOW)
    a = world.ra.trigger_revocation(order, NOW)
    b = world.ra.trigger_revocation(order, NOW + 10)
    assert a == b
    assert len(world.ra.outbox) == 2
    assert world.pca.crl.sequence_number == a.pca_crl.sequence_number


def test_resolution_over_the_wire():
    w = World(now=time.time())
    v = holder(w)
    servers = [FrameServer(w.pca.handle).start(), FrameServer(w.ltca.handle).start()]
    try:
        pca_client = RemoteAuthorityClient(RemoteEndpoint("PCA-1", "127.0.0.1", servers[0].port), w.h.trust_store.public_key("PCA-1"))
        ltca_client = RemoteAuthorityClient(RemoteEndpoint("LTCA-1", "127.0.0.1", servers[1].port), w.h.trust_store.public_key("LTCA-1"))
        ra = w.h.ra({"PCA-1": pca_client}, {"LTCA-1": ltca_client})
        vid, order = ra.resolve(v.pool.entries[1][0], "wire", w.now)
        assert vid == "V003"
        effects = ra.trigger_revocation(order, w.now)
        assert v.ltc.serial in effects.ltca_crl.revoked_serials
    finally:
        for s in servers:
            s.stop()


def test_remote_errors_carry_codes():
    w = World(now=time.time())
    server = FrameServer(w.pca.handle).start()
    try:
        client = RemoteAuthorityClient(RemoteEndpoint("PCA-1", "127.0.0.1", server.port), w.h.trust_store.public_key("PCA-1"))
        order = w.ra.authorization("resolve-pseudonym", b"\x01" * 16, b"o", w.now)
        with pytest.raises(VpkiError) as exc:
            client.resolve_pseudonym(b"\x01" * 16, order, w.now)
        assert exc.value.code == "unknown-pseudonym"
    finally:
        server.stop()
