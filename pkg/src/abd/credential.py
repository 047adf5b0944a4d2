"""Credentials: signed attribute assertions held by their subject.

A credential states that an issuer granted one attribute to one subject key,
with an expiration. Credentials travel as JSON between parties and live as
CRED records in the subject's local namestore. They are never published to
the name system; the only place a credential crosses the wire is inside the
subject's message to a verifier.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterable, Optional

from .core import (
    KEY_LEN,
    SIGNATURE_LEN,
    NamespaceKey,
    RecordType,
    ResourceRecord,
    check_label,
    register_payload_codec,
    verify_signature,
)
from .errors import BadSignature, CollectionIncomplete, DecodeError, JsonError
from .namestore import NamespaceStore
from .netsim import NameSystemBackend

CREDENTIAL_CONTEXT = b"ABD-CRED-V1"


@dataclass(frozen=True)
class Credential:
    issuer: bytes
    subject: bytes
    attribute: str
    expiration_us: int
    signature: bytes

    def __post_init__(self) -> None:
        if len(self.issuer) != KEY_LEN or len(self.subject) != KEY_LEN:
            raise ValueError(f"keys must be {KEY_LEN} bytes")
        check_label(self.attribute)

    def signing_bytes(self) -> bytes:
        return credential_signing_bytes(
            self.issuer, self.subject, self.expiration_us, self.attribute
        )

    def canonical_bytes(self) -> bytes:
        """CRED payload: issuer | subject | expiration | attribute | signature."""
        attribute = self.attribute.encode("utf-8")
        return (
            self.issuer
            + self.subject
            + struct.pack(">Q", self.expiration_us)
            + struct.pack(">H", len(attribute))
            + attribute
            + self.signature
        )


def credential_signing_bytes(
    issuer: bytes, subject: bytes, expiration_us: int, attribute: str
) -> bytes:
    return (
        CREDENTIAL_CONTEXT
        + issuer
        + subject
        + struct.pack(">Q", expiration_us)
        + attribute.encode("utf-8")
    )


def issue_credential(
    issuer: NamespaceKey,
    subject_pub: bytes,
    attribute: str,
    *,
    clock: int,
    lifetime_us: int,
) -> Credential:
    """Sign an attribute over to ``subject_pub``.

    A zero lifetime produces a credential that is already expired; callers
    get exactly what they asked for.
    """
    check_label(attribute)
    expiration = clock + lifetime_us
    signature = issuer.sign(
        credential_signing_bytes(issuer.public_key, subject_pub, expiration, attribute)
    )
    return Credential(
        issuer=issuer.public_key,
        subject=subject_pub,
        attribute=attribute,
        expiration_us=expiration,
        signature=signature,
    )


def verify_credential(credential: Credential, clock: int) -> bool:
    """True iff the signature verifies and the credential is unexpired."""
    if credential.expiration_us <= clock:
        return False
    return verify_signature(
        credential.issuer, credential.signature, credential.signing_bytes()
    )


# --- CRED record codec --------------------------------------------------------


def decode_cred_payload(data: bytes) -> Credential:
    view = memoryview(data)
    pos = 0

    def need(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(view):
            raise DecodeError(f"truncated {what}", pos)
        chunk = bytes(view[pos : pos + n])
        pos += n
        return chunk

    issuer = need(KEY_LEN, "issuer key")
    subject = need(KEY_LEN, "subject key")
    (expiration,) = struct.unpack(">Q", need(8, "expiration"))
    (attr_len,) = struct.unpack(">H", need(2, "attribute length"))
    attr_start = pos
    try:
        attribute = need(attr_len, "attribute").decode("utf-8")
    except UnicodeDecodeError:
        raise DecodeError("attribute is not valid UTF-8", attr_start)
    signature = need(SIGNATURE_LEN, "signature")
    if pos != len(view):
        raise DecodeError("trailing bytes after signature", pos)
    try:
        return Credential(
            issuer=issuer,
            subject=subject,
            attribute=attribute,
            expiration_us=expiration,
            signature=signature,
        )
    except Exception as exc:
        raise DecodeError(f"invalid credential fields: {exc}", 0)


register_payload_codec(RecordType.CRED, decode_cred_payload)


def credential_record(credential: Credential) -> ResourceRecord:
    return ResourceRecord(
        record_type=RecordType.CRED,
        payload=credential.canonical_bytes(),
        expiration_us=credential.expiration_us,
    )


# --- JSON transfer -------------------------------------------------------------

_JSON_FIELDS = ("issuer", "subject", "attribute", "expiration_us", "signature")


def export_json(credential: Credential) -> dict:
    return {
        "issuer": credential.issuer.hex(),
        "subject": credential.subject.hex(),
        "attribute": credential.attribute,
        "expiration_us": credential.expiration_us,
        "signature": credential.signature.hex(),
    }


def import_json(data: dict) -> Credential:
    """Parse and re-verify a credential received as JSON.

    Missing or ill-typed fields raise JsonError naming the field; a
    credential whose signature does not verify raises BadSignature.
    Expiration is deliberately not checked here: importing an expired
    credential is legal, using it is not.
    """
    if not isinstance(data, dict):
        raise JsonError("credential must be a JSON object", field="")
    for name in _JSON_FIELDS:
        if name not in data:
            raise JsonError(f"missing field {name!r}", field=name)
    try:
        issuer = bytes.fromhex(data["issuer"])
    except (TypeError, ValueError):
        raise JsonError("issuer must be a hex string", field="issuer")
    try:
        subject = bytes.fromhex(data["subject"])
    except (TypeError, ValueError):
        raise JsonError("subject must be a hex string", field="subject")
    attribute = data["attribute"]
    if not isinstance(attribute, str):
        raise JsonError("attribute must be a string", field="attribute")
    expiration = data["expiration_us"]
    if not isinstance(expiration, int) or isinstance(expiration, bool):
        raise JsonError("expiration_us must be an integer", field="expiration_us")
    try:
        signature = bytes.fromhex(data["signature"])
    except (TypeError, ValueError):
        raise JsonError("signature must be a hex string", field="signature")
    try:
        credential = Credential(
            issuer=issuer,
            subject=subject,
            attribute=attribute,
            expiration_us=expiration,
            signature=signature,
        )
    except Exception as exc:
        raise JsonError(str(exc), field="")
    if not verify_signature(issuer, signature, credential.signing_bytes()):
        raise BadSignature("imported credential signature does not verify")
    return credential


# --- holder-side storage --------------------------------------------------------


def store_credential(
    store: NamespaceStore, holder: NamespaceKey, credential: Credential
) -> None:
    """Keep a credential as a CRED record under its attribute label.

    Merges with whatever already lives under the label; publishing skips
    CRED records, so stored credentials stay local.
    """
    namespace = store.load_namespace(holder.public_key)
    existing = namespace.entries.get(credential.attribute)
    records = list(existing.records) if existing else []
    record = credential_record(credential)
    if record in records:
        return
    records.append(record)
    store.store(holder, credential.attribute, records)


def list_credentials(store: NamespaceStore, holder_pub: bytes) -> list[Credential]:
    namespace = store.load_namespace(holder_pub)
    out = []
    for label in sorted(namespace.entries):
        for record in namespace.entries[label].records:
            if record.record_type == RecordType.CRED:
                out.append(decode_cred_payload(record.payload))
    return out


# --- collection -----------------------------------------------------------------


@dataclass
class CollectResult:
    """Outcome of gathering proof material for a policy.

    ``credentials`` is the union of credentials backing some chain (the set
    handed to the verifier); ``unsatisfied`` lists policy attributes with no
    chain; ``chains`` keeps the discovered chain per satisfied attribute.
    """

    credentials: tuple[Credential, ...]
    unsatisfied: tuple[str, ...]
    chains: dict

    @property
    def complete(self) -> bool:
        return not self.unsatisfied


def collect(
    subject_pub: bytes,
    subject_creds: Iterable[Credential],
    verifier_pub: bytes,
    policy_attrs: Iterable[str],
    backend: NameSystemBackend,
    clock: int,
    limits=None,
) -> CollectResult:
    """Find, per policy attribute, a credential subset proving membership.

    Runs chain discovery from the verifier's namespace toward the subject's
    credentials. Backend failures abort with CollectionIncomplete: "could
    not find out" is not the same answer as "no chain exists".
    """
    from .discovery import Limits, discover
    from .errors import BackendError

    creds = list(subject_creds)
    satisfied: dict = {}
    unsatisfied: list[str] = []
    chosen: list[Credential] = []
    seen: set[bytes] = set()
    for attribute in policy_attrs:
        check_label(attribute)
        try:
            chain = discover(
                issuer_pub=verifier_pub,
                attribute=attribute,
                subject_pub=subject_pub,
                subject_creds=creds,
                backend=backend,
                clock=clock,
                limits=limits or Limits(),
            )
        except BackendError as exc:
            raise CollectionIncomplete(attribute, exc)
        if chain is None:
            unsatisfied.append(attribute)
            continue
        satisfied[attribute] = chain
        for leaf_cred in chain.credentials():
            if leaf_cred.signature not in seen:
                seen.add(leaf_cred.signature)
                chosen.append(leaf_cred)
    return CollectResult(
        credentials=tuple(chosen),
        unsatisfied=tuple(unsatisfied),
        chains=satisfied,
    )
