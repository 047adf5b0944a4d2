"""Keys, records, and the canonical wire format."""
from __future__ import annotations

import struct

import pytest
from hypothesis import given, strategies as st

from abd import core
from abd.core import (
    NamespaceKey,
    RecordSet,
    RecordType,
    ResourceRecord,
    canonical_deserialize,
    canonical_serialize,
    sign_record_set,
    verify_record_set,
)
from abd.errors import DecodeError, InvalidLabel, MissingPrivateKey

# Ed25519 public key for the all-zeros seed, computed once from the raw
# primitive and frozen here.
SEED_ZERO_PUB_HEX = "3b6a27bcceb6a42d62a3a8d02a6f0d73653215771de243a63ac048a18b59da29"

CLOCK = 1_700_000_000_000_000


def make_key(tag: bytes = b"k") -> NamespaceKey:
    return NamespaceKey.generate(seed=tag.ljust(32, b"\0"))


def attr_record(payload: bytes, expiration: int = CLOCK + 1_000_000) -> ResourceRecord:
    return ResourceRecord(RecordType.ATTR, payload, expiration)


def entity_payload(subject_tag: bytes) -> bytes:
    # Hand-packed single-entity delegation payload: entry count u32, then a
    # 32-byte subject key and a u16 zero trail count. Kept independent of the
    # production encoder on purpose.
    subject = subject_tag.ljust(32, b"\0")[:32]
    return struct.pack(">I", 1) + subject + struct.pack(">H", 0)


# --- key generation ---------------------------------------------------------


def test_seeded_generation_is_deterministic():
    a = NamespaceKey.generate(seed=bytes(32))
    b = NamespaceKey.generate(seed=bytes(32))
    assert a.public_key == b.public_key == bytes.fromhex(SEED_ZERO_PUB_HEX)
    assert a == b


def test_unseeded_generation_is_distinct():
    assert NamespaceKey.generate().public_key != NamespaceKey.generate().public_key


def test_keys_equal_iff_public_keys_equal():
    a = NamespaceKey.generate(seed=bytes(32))
    public_only = a.public_only()
    assert public_only == a
    assert public_only.private_key is None


def test_sign_without_private_key_raises():
    key = make_key().public_only()
    with pytest.raises(MissingPrivateKey):
        key.sign(b"message")


# --- record encoding --------------------------------------------------------


def test_record_canonical_bytes_layout():
    # Independently hand-packed: type u32 | flags u32 | expiration u64 |
    # payload_len u32 | payload, all big-endian.
    record = ResourceRecord(RecordType.ATTR, b"hi", 2)
    expected = struct.pack(">IIQI", 1, 0, 2, 2) + b"hi"
    assert record.canonical_bytes() == expected

    relative = ResourceRecord(RecordType.CRED, b"", 3_600_000_000, relative=True)
    assert relative.canonical_bytes() == struct.pack(">IIQI", 2, 1, 3_600_000_000, 0)


def test_relative_records_never_count_as_expired():
    record = ResourceRecord(RecordType.ATTR, b"x", 10, relative=True)
    assert not record.is_expired(10**18)
    stamped = record.stamped(100)
    assert stamped.expiration_us == 110
    assert not stamped.relative
    assert stamped.is_expired(110)  # expiration <= clock means expired
    assert not stamped.is_expired(109)


# --- record set signing -----------------------------------------------------


def test_sign_and_verify_round_trip():
    key = make_key()
    rset = sign_record_set(key, "user", [attr_record(entity_payload(b"\x01\x02"))])
    assert verify_record_set(key.public_key, rset, CLOCK)


def test_signing_bytes_layout_matches_hand_packed():
    key = make_key()
    record = attr_record(b"\xaa\xbb\xcc")
    rset = sign_record_set(key, "user", [record])
    expected = (
        b"ABD-RRSET-V1"
        + key.public_key
        + struct.pack(">H", 4)
        + b"user"
        + struct.pack(">I", 1)
        + record.canonical_bytes()
    )
    assert rset.signing_bytes() == expected
    assert canonical_serialize(rset) == expected + rset.signature


def test_verify_rejects_flipped_payload_bit():
    key = make_key()
    rset = sign_record_set(key, "user", [attr_record(entity_payload(b"\x01\x02"))])
    tampered = RecordSet(
        public_key=rset.public_key,
        label=rset.label,
        records=(attr_record(entity_payload(b"\x01\x03")),),
        signature=rset.signature,
    )
    assert not verify_record_set(key.public_key, tampered, CLOCK)


def test_verify_rejects_wrong_key():
    key = make_key(b"a")
    other = make_key(b"b")
    rset = sign_record_set(key, "user", [attr_record(entity_payload(b"\x01"))])
    assert not verify_record_set(other.public_key, rset, CLOCK)


def test_verify_rejects_expired_record():
    key = make_key()
    payload = entity_payload(b"\x01")
    rset = sign_record_set(key, "user", [attr_record(payload, expiration=CLOCK - 1)])
    assert not verify_record_set(key.public_key, rset, CLOCK)
    # One microsecond before expiration the set is still good.
    rset2 = sign_record_set(key, "user", [attr_record(payload, expiration=CLOCK + 1)])
    assert verify_record_set(key.public_key, rset2, CLOCK)


def test_empty_record_set_is_legal_and_verifies():
    key = make_key()
    rset = sign_record_set(key, "user", [])
    assert rset.records == ()
    assert verify_record_set(key.public_key, rset, CLOCK)


def test_signature_independent_of_insertion_order():
    key = make_key()
    payloads = [entity_payload(t) for t in (b"\x01", b"\x02", b"\x03")]
    records = [attr_record(payloads[1]), attr_record(payloads[0]), attr_record(payloads[2])]
    a = sign_record_set(key, "user", records)
    b = sign_record_set(key, "user", list(reversed(records)))
    assert canonical_serialize(a) == canonical_serialize(b)
    assert [r.payload for r in a.records] == payloads


def test_invalid_label_rejected():
    key = make_key()
    for label in ("", "UPPER", "has.dot", "x" * 64, "spa ce"):
        with pytest.raises(InvalidLabel):
            sign_record_set(key, label, [])
    # 63 characters is the longest legal label.
    sign_record_set(key, "x" * 63, [])


# --- canonical serialization ------------------------------------------------


def test_serialize_deserialize_round_trip():
    key = make_key()
    rset = sign_record_set(
        key,
        "role",
        [
            attr_record(b"\x01\x02"),
            ResourceRecord(RecordType.CRED, b"credbytes", 7_200_000_000, relative=True),
        ],
    )
    assert canonical_deserialize(canonical_serialize(rset)) == rset


def test_deserialize_reports_offset_of_truncation():
    key = make_key()
    data = canonical_serialize(sign_record_set(key, "user", [attr_record(b"\x01")]))
    with pytest.raises(DecodeError) as exc:
        canonical_deserialize(data[:-1])
    assert exc.value.offset <= len(data) - 1

    with pytest.raises(DecodeError):
        canonical_deserialize(data + b"\x00")  # trailing garbage

    with pytest.raises(DecodeError) as exc:
        canonical_deserialize(b"NOT-A-RECORD-SET" + data)
    assert exc.value.offset == 0


def test_deserialize_rejects_unknown_flags():
    key = make_key()
    record = attr_record(b"\x01")
    body = (
        b"ABD-RRSET-V1"
        + key.public_key
        + struct.pack(">H", 4)
        + b"user"
        + struct.pack(">I", 1)
        + struct.pack(">IIQI", 1, 0x80, record.expiration_us, 1)
        + b"\x01"
    )
    with pytest.raises(DecodeError):
        canonical_deserialize(body + bytes(64))


@given(
    subjects=st.lists(st.binary(min_size=32, max_size=32), max_size=5),
    label=st.from_regex(r"[a-z0-9_-]{1,63}", fullmatch=True),
)
def test_round_trip_property(subjects, label):
    key = make_key()
    records = [attr_record(entity_payload(s)) for s in subjects]
    rset = sign_record_set(key, label, records)
    again = canonical_deserialize(canonical_serialize(rset))
    assert again == rset
    assert verify_record_set(key.public_key, again, CLOCK)


@given(st.data())
def test_serialization_injective_on_distinct_payload_sets(data):
    key = make_key()
    a = data.draw(st.sets(st.binary(min_size=32, max_size=32), max_size=4))
    b = data.draw(st.sets(st.binary(min_size=32, max_size=32), max_size=4))
    ra = sign_record_set(key, "user", [attr_record(entity_payload(p)) for p in a])
    rb = sign_record_set(key, "user", [attr_record(entity_payload(p)) for p in b])
    assert (canonical_serialize(ra) == canonical_serialize(rb)) == (a == b)
