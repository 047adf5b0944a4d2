"""Namespace keys, resource records, and the canonical wire format.

Everything that ends up signed or hashed lives here. Layouts are big-endian
and fully deterministic: equal inputs produce byte-identical encodings, so
record sets can be compared, deduplicated, and replicated by value.

Time is always microseconds since the Unix epoch (UTC), passed explicitly.
Nothing in this module reads the wall clock.
"""
from __future__ import annotations

import re
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable, Iterable, Optional

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .errors import (
    DecodeError,
    InvalidLabel,
    MalformedRecordSet,
    MissingPrivateKey,
)

KEY_LEN = 32
SIGNATURE_LEN = 64
LABEL_RE = re.compile(r"^[a-z0-9_-]{1,63}$")

# Domain-separation tag for record set signatures.
RECORD_SET_CONTEXT = b"ABD-RRSET-V1"

# Bit 0 of the flags word: expiration is a relative duration, stamped to an
# absolute timestamp when the record is published.
FLAG_RELATIVE_EXPIRATION = 0x01

MICROSECONDS = 1
MILLISECONDS = 1_000
SECONDS = 1_000_000
MINUTES = 60 * SECONDS
HOURS = 60 * MINUTES
DAYS = 24 * HOURS


class RecordType(IntEnum):
    ATTR = 1
    CRED = 2


def valid_label(label: str) -> bool:
    return bool(LABEL_RE.match(label))


def check_label(label: str) -> str:
    if not valid_label(label):
        raise InvalidLabel(f"invalid label: {label!r}")
    return label


@dataclass(frozen=True)
class NamespaceKey:
    """An Ed25519 keypair naming a namespace.

    The 32-byte public key is the namespace's global identity. The private
    half is optional; holders of the public half can verify but not sign.
    Two keys are equal iff their public keys are byte-equal.
    """

    public_key: bytes
    private_key: Optional[bytes] = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        if len(self.public_key) != KEY_LEN:
            raise ValueError(f"public key must be {KEY_LEN} bytes")
        if self.private_key is not None and len(self.private_key) != KEY_LEN:
            raise ValueError(f"private key must be {KEY_LEN} bytes")

    @classmethod
    def generate(cls, seed: Optional[bytes] = None) -> "NamespaceKey":
        """Create a keypair. A 32-byte seed makes generation deterministic."""
        if seed is None:
            private = Ed25519PrivateKey.generate()
            seed_bytes = private.private_bytes_raw()
        else:
            if len(seed) != KEY_LEN:
                raise ValueError(f"seed must be {KEY_LEN} bytes")
            seed_bytes = seed
            private = Ed25519PrivateKey.from_private_bytes(seed)
        public = private.public_key().public_bytes_raw()
        return cls(public_key=public, private_key=seed_bytes)

    @property
    def hex(self) -> str:
        return self.public_key.hex()

    @property
    def has_private(self) -> bool:
        return self.private_key is not None

    def public_only(self) -> "NamespaceKey":
        return NamespaceKey(public_key=self.public_key)

    def sign(self, message: bytes) -> bytes:
        if self.private_key is None:
            raise MissingPrivateKey(
                f"namespace {self.hex[:16]}... has no private key"
            )
        return Ed25519PrivateKey.from_private_bytes(self.private_key).sign(message)


def verify_signature(public_key: bytes, signature: bytes, message: bytes) -> bool:
    if len(signature) != SIGNATURE_LEN:
        return False
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
        return True
    except (InvalidSignature, ValueError):
        return False


@dataclass(frozen=True)
class ResourceRecord:
    """One typed payload with an expiration.

    ``expiration_us`` is an absolute timestamp unless ``relative`` is set, in
    which case it is a duration to be stamped at publish time.
    """

    record_type: int
    payload: bytes
    expiration_us: int
    relative: bool = False

    def __post_init__(self) -> None:
        if self.expiration_us < 0 or self.expiration_us > 0xFFFFFFFFFFFFFFFF:
            raise ValueError("expiration out of u64 range")

    @property
    def flags(self) -> int:
        return FLAG_RELATIVE_EXPIRATION if self.relative else 0

    def is_expired(self, clock: int) -> bool:
        """Absolute records expire once the clock passes expiration."""
        if self.relative:
            return False
        return self.expiration_us <= clock

    def stamped(self, clock: int) -> "ResourceRecord":
        """Return the absolute form of this record as of ``clock``."""
        if not self.relative:
            return self
        return ResourceRecord(
            record_type=self.record_type,
            payload=self.payload,
            expiration_us=clock + self.expiration_us,
            relative=False,
        )

    def canonical_bytes(self) -> bytes:
        return (
            struct.pack(
                ">IIQI",
                self.record_type,
                self.flags,
                self.expiration_us,
                len(self.payload),
            )
            + self.payload
        )


def _record_sort_key(record: ResourceRecord) -> tuple:
    # Payload bytes order the set; the full encoding breaks ties so the
    # serialization is total and injective.
    return (record.payload, record.canonical_bytes())


def sort_records(records: Iterable[ResourceRecord]) -> tuple[ResourceRecord, ...]:
    return tuple(sorted(records, key=_record_sort_key))


@dataclass(frozen=True)
class RecordSet:
    """All records published under one (namespace, label), signed as a unit.

    ``records`` is kept in canonical order; an empty tuple is legal and means
    "nothing delegated here".
    """

    public_key: bytes
    label: str
    records: tuple[ResourceRecord, ...]
    signature: bytes

    def signing_bytes(self) -> bytes:
        return record_set_signing_bytes(self.public_key, self.label, self.records)

    def min_expiration(self, clock: int) -> Optional[int]:
        """Earliest absolute expiration among unexpired records, if any."""
        live = [
            r.expiration_us
            for r in self.records
            if not r.relative and not r.is_expired(clock)
        ]
        return min(live) if live else None

    def has_live_record(self, clock: int) -> bool:
        return any(not r.is_expired(clock) for r in self.records)


def record_set_signing_bytes(
    public_key: bytes, label: str, records: Iterable[ResourceRecord]
) -> bytes:
    label_bytes = label.encode("utf-8")
    ordered = sort_records(records)
    out = bytearray()
    out += RECORD_SET_CONTEXT
    out += public_key
    out += struct.pack(">H", len(label_bytes))
    out += label_bytes
    out += struct.pack(">I", len(ordered))
    for record in ordered:
        out += record.canonical_bytes()
    return bytes(out)


def sign_record_set(
    owner: NamespaceKey, label: str, records: Iterable[ResourceRecord]
) -> RecordSet:
    """Sign ``records`` under ``label`` in the owner's namespace.

    Records are sorted into canonical order first, so insertion order never
    leaks into the signature.
    """
    check_label(label)
    ordered = sort_records(records)
    message = record_set_signing_bytes(owner.public_key, label, ordered)
    signature = owner.sign(message)
    return RecordSet(
        public_key=owner.public_key,
        label=label,
        records=ordered,
        signature=signature,
    )


# Payload codecs are registered by the modules that own each record type,
# keeping this module free of upward dependencies.
_PAYLOAD_DECODERS: dict[int, Callable[[bytes], object]] = {}


def register_payload_codec(record_type: int, decoder: Callable[[bytes], object]) -> None:
    _PAYLOAD_DECODERS[record_type] = decoder


def decode_payload(record: ResourceRecord) -> object:
    decoder = _PAYLOAD_DECODERS.get(record.record_type)
    if decoder is None:
        raise MalformedRecordSet(f"no codec for record type {record.record_type}")
    return decoder(record.payload)


def verify_record_set(public_key: bytes, record_set: RecordSet, clock: int) -> bool:
    """Full integrity check: signature, freshness, and payload shape.

    Returns False when the signature does not verify or any absolute record
    has already expired at ``clock``. Raises MalformedRecordSet when a
    payload does not decode under its record type's codec.
    """
    if record_set.public_key != public_key:
        return False
    for record in record_set.records:
        decoder = _PAYLOAD_DECODERS.get(record.record_type)
        if decoder is not None:
            try:
                decoder(record.payload)
            except DecodeError as exc:
                raise MalformedRecordSet(
                    f"record type {record.record_type} payload: {exc}"
                ) from exc
    if not verify_signature(
        public_key, record_set.signature, record_set.signing_bytes()
    ):
        return False
    return not any(r.is_expired(clock) for r in record_set.records)


def verify_record_set_signature(record_set: RecordSet) -> bool:
    """Signature-only check, ignoring expirations (used by backends)."""
    return verify_signature(
        record_set.public_key, record_set.signature, record_set.signing_bytes()
    )


def canonical_serialize(record_set: RecordSet) -> bytes:
    return record_set.signing_bytes() + record_set.signature


def canonical_deserialize(data: bytes) -> RecordSet:
    """Inverse of canonical_serialize. Raises DecodeError with the offset
    of the first malformed byte; trailing garbage is an error."""
    view = memoryview(data)
    pos = 0

    def need(n: int, what: str) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise DecodeError(f"truncated {what}", pos)
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    context = bytes(need(len(RECORD_SET_CONTEXT), "context tag"))
    if context != RECORD_SET_CONTEXT:
        raise DecodeError("bad context tag", 0)
    public_key = bytes(need(KEY_LEN, "public key"))
    (label_len,) = struct.unpack(">H", need(2, "label length"))
    label_start = pos
    try:
        label = bytes(need(label_len, "label")).decode("utf-8")
    except UnicodeDecodeError:
        raise DecodeError("label is not valid UTF-8", label_start)
    if not valid_label(label):
        raise DecodeError(f"invalid label {label!r}", label_start)
    (count,) = struct.unpack(">I", need(4, "record count"))
    records = []
    for _ in range(count):
        header_start = pos
        rtype, flags, expiration, payload_len = struct.unpack(
            ">IIQI", need(20, "record header")
        )
        if flags & ~FLAG_RELATIVE_EXPIRATION:
            raise DecodeError(f"unknown flags {flags:#x}", header_start + 4)
        payload = bytes(need(payload_len, "record payload"))
        records.append(
            ResourceRecord(
                record_type=rtype,
                payload=payload,
                expiration_us=expiration,
                relative=bool(flags & FLAG_RELATIVE_EXPIRATION),
            )
        )
    signature = bytes(need(SIGNATURE_LEN, "signature"))
    if pos != len(view):
        raise DecodeError("trailing bytes after signature", pos)
    ordered = sort_records(records)
    if tuple(records) != ordered:
        raise DecodeError("records not in canonical order", 0)
    return RecordSet(
        public_key=public_key,
        label=label,
        records=ordered,
        signature=signature,
    )
