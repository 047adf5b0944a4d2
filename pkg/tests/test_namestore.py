"""Disk store: identities, record-set persistence, quarantine, publication."""
from __future__ import annotations

import json

import pytest

from abd.core import (
    NamespaceKey,
    RecordType,
    ResourceRecord,
    canonical_serialize,
    sign_record_set,
)
from abd.credential import issue_credential
from abd.delegation import add_delegation, encode_attr_payload, expression
from abd.errors import MissingPrivateKey, NotFound, UnknownPetname
from abd.namestore import NamespaceStore
from abd.netsim import InMemoryBackend, derive_query_key

CLOCK = 1_700_000_000_000_000
HOUR = 3_600_000_000


def key(tag: bytes) -> NamespaceKey:
    return NamespaceKey.generate(seed=tag.ljust(32, b"\0"))


def attr_record(subject: bytes, expiration: int = CLOCK + HOUR, relative=False):
    payload = encode_attr_payload(expression([(subject, [])]))
    return ResourceRecord(RecordType.ATTR, payload, expiration, relative=relative)


# --- identities ------------------------------------------------------------------


def test_create_identity_persists_seed_and_petname(tmp_path):
    store = NamespaceStore(tmp_path)
    created = store.create_identity(petname="me", seed=b"x".ljust(32, b"\0"))
    again = NamespaceStore(tmp_path)  # fresh handle on the same directory
    loaded = again.key_for("me")
    assert loaded.public_key == created.public_key
    assert loaded.private_key == created.private_key
    seed_path = tmp_path / "keys" / f"{created.hex}.seed"
    assert seed_path.stat().st_mode & 0o777 == 0o600


def test_key_for_hex_without_seed_is_public_only(tmp_path):
    store = NamespaceStore(tmp_path)
    stranger = key(b"stranger")
    resolved = store.key_for(stranger.hex)
    assert resolved.public_key == stranger.public_key
    assert resolved.private_key is None


def test_key_for_unknown_name(tmp_path):
    store = NamespaceStore(tmp_path)
    with pytest.raises(UnknownPetname):
        store.key_for("nobody")
    with pytest.raises(UnknownPetname):
        store.key_for("abc123")  # hex but not 32 bytes


def test_identities_sorted(tmp_path):
    store = NamespaceStore(tmp_path)
    b = store.create_identity(petname="bbb", seed=b"1".ljust(32, b"\0"))
    a = store.create_identity(petname="aaa", seed=b"2".ljust(32, b"\0"))
    assert store.identities() == [("aaa", a.hex), ("bbb", b.hex)]


# --- entry persistence --------------------------------------------------------------


def test_store_and_load_round_trip(tmp_path):
    store = NamespaceStore(tmp_path)
    owner = store.create_identity(petname="owner", seed=b"o".ljust(32, b"\0"))
    record = attr_record(key(b"s").public_key)
    written = store.store(owner, "boss", [record])
    namespace = store.load_namespace(owner.public_key)
    assert namespace.entries["boss"] == written
    assert store.list_labels(owner.public_key) == ["boss"]


def test_store_requires_private_key(tmp_path):
    store = NamespaceStore(tmp_path)
    with pytest.raises(MissingPrivateKey):
        store.store(key(b"x").public_only(), "boss", [])


def test_tampered_entry_is_quarantined_not_loaded(tmp_path):
    store = NamespaceStore(tmp_path)
    owner = store.create_identity(petname="owner", seed=b"o".ljust(32, b"\0"))
    store.store(owner, "boss", [attr_record(key(b"s").public_key)])
    path = tmp_path / "names" / owner.hex / "boss.rrset"
    raw = bytearray(path.read_bytes())
    raw[-1] ^= 0x01  # flip a signature bit
    path.write_bytes(bytes(raw))

    namespace = store.load_namespace(owner.public_key)
    assert "boss" not in namespace.entries
    assert "boss" in namespace.quarantined
    assert not path.exists()
    assert path.with_name("boss.rrset.quarantined").exists()


def test_entry_bound_to_wrong_label_is_quarantined(tmp_path):
    store = NamespaceStore(tmp_path)
    owner = store.create_identity(petname="owner", seed=b"o".ljust(32, b"\0"))
    rset = sign_record_set(owner, "other", [attr_record(key(b"s").public_key)])
    directory = tmp_path / "names" / owner.hex
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "boss.rrset").write_bytes(canonical_serialize(rset))
    namespace = store.load_namespace(owner.public_key)
    assert "boss" in namespace.quarantined


def test_remove_queues_pending_removal(tmp_path):
    store = NamespaceStore(tmp_path)
    owner = store.create_identity(petname="owner", seed=b"o".ljust(32, b"\0"))
    store.store(owner, "boss", [attr_record(key(b"s").public_key)])
    store.remove(owner, "boss")
    assert store.list_labels(owner.public_key) == []
    pending = json.loads((tmp_path / "names" / owner.hex / ".pending-removals").read_text())
    assert pending == ["boss"]
    with pytest.raises(NotFound):
        store.remove(owner, "boss")
    # Re-storing the label cancels the queued deletion.
    store.store(owner, "boss", [attr_record(key(b"s").public_key)])
    assert not (tmp_path / "names" / owner.hex / ".pending-removals").exists()


# --- publication -----------------------------------------------------------------------


def test_publish_stores_attr_and_keeps_credentials_local(tmp_path):
    store = NamespaceStore(tmp_path)
    owner = store.create_identity(petname="owner", seed=b"o".ljust(32, b"\0"))
    holder_cred = issue_credential(
        key(b"i"), owner.public_key, "member", clock=CLOCK, lifetime_us=HOUR
    )
    store.store(owner, "boss", [attr_record(key(b"s").public_key)])
    store.store(
        owner,
        "member",
        [ResourceRecord(RecordType.CRED, holder_cred.canonical_bytes(), holder_cred.expiration_us)],
    )
    backend = InMemoryBackend()
    report = store.publish(owner, backend, CLOCK)
    assert report.ok
    actions = {e.label: e.action for e in report.entries}
    assert actions == {"boss": "stored", "member": "kept-local"}
    assert backend.get(derive_query_key(owner.public_key, "boss"), CLOCK) is not None
    assert backend.get(derive_query_key(owner.public_key, "member"), CLOCK) is None


def test_publish_stamps_relative_expirations(tmp_path):
    store = NamespaceStore(tmp_path)
    owner = store.create_identity(petname="owner", seed=b"o".ljust(32, b"\0"))
    store.store(owner, "boss", [attr_record(key(b"s").public_key, HOUR, relative=True)])
    backend = InMemoryBackend()
    report = store.publish(owner, backend, CLOCK)
    assert report.entries[0].expiration_us == CLOCK + HOUR
    published = backend.get(derive_query_key(owner.public_key, "boss"), CLOCK)
    assert published.records[0].expiration_us == CLOCK + HOUR
    assert not published.records[0].relative
    # Republishing later refreshes the lifetime from the local relative record.
    later = CLOCK + 30 * HOUR
    store.publish(owner, backend, later)
    refreshed = backend.get(derive_query_key(owner.public_key, "boss"), later)
    assert refreshed.records[0].expiration_us == later + HOUR


def test_publish_reports_expired_record(tmp_path):
    store = NamespaceStore(tmp_path)
    owner = store.create_identity(petname="owner", seed=b"o".ljust(32, b"\0"))
    store.store(owner, "boss", [attr_record(key(b"s").public_key, CLOCK - 1)])
    report = store.publish(owner, InMemoryBackend(), CLOCK)
    assert not report.ok
    assert report.entries[0].action == "failed"


def test_publish_propagates_removal_as_empty_set(tmp_path):
    store = NamespaceStore(tmp_path)
    owner = store.create_identity(petname="owner", seed=b"o".ljust(32, b"\0"))
    backend = InMemoryBackend()
    store.store(owner, "boss", [attr_record(key(b"s").public_key)])
    store.publish(owner, backend, CLOCK)
    query_key = derive_query_key(owner.public_key, "boss")
    assert backend.get(query_key, CLOCK) is not None

    store.remove(owner, "boss")
    report = store.publish(owner, backend, CLOCK)
    assert {e.label: e.action for e in report.entries} == {"boss": "deleted"}
    assert backend.get(query_key, CLOCK) is None
    # The queue drains once the deletion lands.
    assert store._pending_removals(owner.public_key) == set()


def test_publish_keeps_pending_removal_on_outage(tmp_path):
    store = NamespaceStore(tmp_path)
    owner = store.create_identity(petname="owner", seed=b"o".ljust(32, b"\0"))
    backend = InMemoryBackend()
    store.store(owner, "boss", [attr_record(key(b"s").public_key)])
    store.publish(owner, backend, CLOCK)
    store.remove(owner, "boss")

    backend.set_available(False)
    report = store.publish(owner, backend, CLOCK)
    assert not report.ok
    assert store._pending_removals(owner.public_key) == {"boss"}

    backend.set_available(True)
    report = store.publish(owner, backend, CLOCK)
    assert report.ok
    assert backend.get(derive_query_key(owner.public_key, "boss"), CLOCK) is None
    assert store._pending_removals(owner.public_key) == set()


def test_publish_failure_is_per_label(tmp_path):
    store = NamespaceStore(tmp_path)
    owner = store.create_identity(petname="owner", seed=b"o".ljust(32, b"\0"))
    add_delegation(store, owner, "good", expression([(key(b"s").public_key, [])]), clock=CLOCK)
    store.store(owner, "stale", [attr_record(key(b"s").public_key, CLOCK - 1)])
    report = store.publish(owner, InMemoryBackend(), CLOCK)
    actions = {e.label: e.action for e in report.entries}
    assert actions["good"] == "stored"
    assert actions["stale"] == "failed"
