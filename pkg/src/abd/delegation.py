"""Delegation expressions and their wire and text forms.

A delegation gives an attribute away: ``issuer.attr <- expression``. The
expression is a set of entries that must ALL hold (a conjunction); each entry
is a subject key plus an attribute trail:

    trail length 0   the subject key itself
    trail length 1   subject.attr
    trail length n   subject.a1.a2...an, resolved left to right

Multiple ATTR records under one label are alternatives (a disjunction).

Text grammar: terms joined by ``&``; each term is a subject (64 hex chars or
a local petname) followed by dot-separated labels. Expressions always render
and parse against a local petname table; keys never appear in records as
names, only as raw bytes.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional

from .core import (
    DAYS,
    KEY_LEN,
    NamespaceKey,
    RecordType,
    ResourceRecord,
    check_label,
    register_payload_codec,
    valid_label,
)
from .errors import DecodeError, DuplicateDelegation, ParseError, UnknownPetname
from .namestore import NamespaceStore

# Resolver guard against unbounded rewrite growth.
MAX_TRAIL_LEN = 16

DEFAULT_RECORD_LIFETIME_US = 30 * DAYS


@dataclass(frozen=True)
class DelegationSetEntry:
    """One conjunct: a subject key and the attribute trail it must satisfy."""

    subject: bytes
    trail: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if len(self.subject) != KEY_LEN:
            raise ValueError(f"subject must be {KEY_LEN} bytes")
        for label in self.trail:
            check_label(label)


@dataclass(frozen=True)
class DelegationExpression:
    entries: tuple[DelegationSetEntry, ...]

    def __post_init__(self) -> None:
        if not self.entries:
            raise ValueError("a delegation expression needs at least one entry")

    @property
    def delegation_type(self) -> int:
        """1 = direct key, 2 = one foreign attribute, 3 = trail, 4 = conjunction."""
        if len(self.entries) > 1:
            return 4
        n = len(self.entries[0].trail)
        return 1 if n == 0 else 2 if n == 1 else 3


def expression(terms: Iterable[tuple[bytes, Iterable[str]]]) -> DelegationExpression:
    return DelegationExpression(
        entries=tuple(DelegationSetEntry(subject=s, trail=tuple(t)) for s, t in terms)
    )


# --- wire format -------------------------------------------------------------


def encode_attr_payload(expr: DelegationExpression) -> bytes:
    out = bytearray(struct.pack(">I", len(expr.entries)))
    for entry in expr.entries:
        out += entry.subject
        out += struct.pack(">H", len(entry.trail))
        for label in entry.trail:
            encoded = label.encode("utf-8")
            out += struct.pack(">H", len(encoded))
            out += encoded
    return bytes(out)


def decode_attr_payload(data: bytes) -> DelegationExpression:
    view = memoryview(data)
    pos = 0

    def need(n: int, what: str) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise DecodeError(f"truncated {what}", pos)
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    (entry_count,) = struct.unpack(">I", need(4, "entry count"))
    if entry_count == 0:
        raise DecodeError("delegation payload with zero entries", 0)
    entries = []
    for _ in range(entry_count):
        subject = bytes(need(KEY_LEN, "subject key"))
        (trail_count,) = struct.unpack(">H", need(2, "trail count"))
        trail = []
        for _ in range(trail_count):
            (label_len,) = struct.unpack(">H", need(2, "label length"))
            label_start = pos
            try:
                label = bytes(need(label_len, "label")).decode("utf-8")
            except UnicodeDecodeError:
                raise DecodeError("label is not valid UTF-8", label_start)
            if not valid_label(label):
                raise DecodeError(f"invalid label {label!r}", label_start)
            trail.append(label)
        entries.append(DelegationSetEntry(subject=subject, trail=tuple(trail)))
    if pos != len(view):
        raise DecodeError("trailing bytes after last entry", pos)
    return DelegationExpression(entries=tuple(entries))


register_payload_codec(RecordType.ATTR, decode_attr_payload)


# --- text form ---------------------------------------------------------------


def parse_expression(
    text: str, petnames: Optional[Mapping[str, bytes]] = None
) -> DelegationExpression:
    """Parse ``subject(.label)*`` terms joined by ``&``."""
    petnames = petnames or {}
    entries = []
    offset = 0
    terms = text.split("&")
    for term in terms:
        stripped = term.strip()
        position = offset + term.index(stripped) if stripped else offset
        offset += len(term) + 1
        if not stripped:
            raise ParseError("empty term", position)
        parts = stripped.split(".")
        subject_text = parts[0]
        if len(subject_text) == 2 * KEY_LEN and all(
            c in "0123456789abcdef" for c in subject_text
        ):
            subject = bytes.fromhex(subject_text)
        elif subject_text in petnames:
            subject = petnames[subject_text]
        else:
            raise UnknownPetname(
                f"subject {subject_text!r} is neither a hex key nor a known petname"
            )
        trail = []
        label_pos = position + len(subject_text) + 1
        for label in parts[1:]:
            if not valid_label(label):
                raise ParseError(f"invalid label {label!r}", label_pos)
            trail.append(label)
            label_pos += len(label) + 1
        entries.append(DelegationSetEntry(subject=subject, trail=tuple(trail)))
    return DelegationExpression(entries=tuple(entries))


def render_expression(
    expr: DelegationExpression, names_by_key: Optional[Mapping[bytes, str]] = None
) -> str:
    """Inverse of parse_expression, preferring petnames when known."""
    names_by_key = names_by_key or {}
    terms = []
    for entry in expr.entries:
        subject = names_by_key.get(entry.subject, entry.subject.hex())
        terms.append(".".join([subject, *entry.trail]))
    return " & ".join(terms)


def render_term(
    subject: bytes,
    trail: Iterable[str],
    names_by_key: Optional[Mapping[bytes, str]] = None,
) -> str:
    names_by_key = names_by_key or {}
    return ".".join([names_by_key.get(subject, subject.hex()), *trail])


# --- issuer-side operations --------------------------------------------------


def delegation_record(
    expr: DelegationExpression,
    *,
    clock: int,
    lifetime_us: int = DEFAULT_RECORD_LIFETIME_US,
    relative: bool = False,
) -> ResourceRecord:
    expiration = lifetime_us if relative else clock + lifetime_us
    return ResourceRecord(
        record_type=RecordType.ATTR,
        payload=encode_attr_payload(expr),
        expiration_us=expiration,
        relative=relative,
    )


def add_delegation(
    store: NamespaceStore,
    issuer: NamespaceKey,
    attribute: str,
    expr: DelegationExpression,
    *,
    clock: int,
    lifetime_us: int = DEFAULT_RECORD_LIFETIME_US,
    relative: bool = False,
) -> ResourceRecord:
    """Append one alternative under ``issuer.attribute``.

    The record only becomes resolvable by others once the namespace is
    published. Adding an expression already present under the label raises
    DuplicateDelegation.
    """
    check_label(attribute)
    record = delegation_record(
        expr, clock=clock, lifetime_us=lifetime_us, relative=relative
    )
    namespace = store.load_namespace(issuer.public_key)
    existing = namespace.entries.get(attribute)
    records = list(existing.records) if existing else []
    if any(
        r.record_type == RecordType.ATTR and r.payload == record.payload
        for r in records
    ):
        raise DuplicateDelegation(
            f"delegation already present under {attribute!r}"
        )
    records.append(record)
    store.store(issuer, attribute, records)
    return record


def remove_delegation(
    store: NamespaceStore,
    issuer: NamespaceKey,
    attribute: str,
    expr: DelegationExpression,
) -> bool:
    """Remove one alternative; returns False when it was not present.

    Removing the last record leaves an explicit empty set, which publishes
    as a deletion.
    """
    check_label(attribute)
    payload = encode_attr_payload(expr)
    namespace = store.load_namespace(issuer.public_key)
    existing = namespace.entries.get(attribute)
    if existing is None:
        return False
    kept = [
        r
        for r in existing.records
        if not (r.record_type == RecordType.ATTR and r.payload == payload)
    ]
    if len(kept) == len(existing.records):
        return False
    store.store(issuer, attribute, kept)
    return True


def list_delegations(
    store: NamespaceStore, issuer_pub: bytes
) -> list[tuple[str, DelegationExpression, ResourceRecord]]:
    namespace = store.load_namespace(issuer_pub)
    out = []
    for label in sorted(namespace.entries):
        for record in namespace.entries[label].records:
            if record.record_type != RecordType.ATTR:
                continue
            out.append((label, decode_attr_payload(record.payload), record))
    return out
