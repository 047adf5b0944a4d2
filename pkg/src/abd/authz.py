"""Authorization: policies, nonce handshake, and the verifier service.

Flow: the subject fetches the policy for a resource and receives a single-use
nonce; collects credentials proving each required attribute; sends a signed
response; the verifier independently re-runs chain discovery for every
required attribute against the supplied credentials and grants only if all
of them check out.

Decisions are three-valued. Deny carries reasons; a backend failure during
verification is an Error ("could not find out"), never a silent Deny.
"""
from __future__ import annotations

import json
import secrets
import struct
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional

from .core import KEY_LEN, NamespaceKey, check_label, verify_signature
from .credential import Credential, collect, export_json, import_json, verify_credential
from .discovery import DelegationChain, Limits, discover
from .errors import (
    AbdError,
    BackendError,
    CollectionIncomplete,
    JsonError,
    UnknownResource,
)
from .netsim import NameSystemBackend

AUTHZ_CONTEXT = b"ABD-AUTHZ-V1"
NONCE_LEN = 16
NONCE_LIFETIME_US = 120_000_000  # two minutes

GRANT, DENY, ERROR = "grant", "deny", "error"


@dataclass(frozen=True)
class Policy:
    resource_id: str
    required_attributes: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.required_attributes:
            raise ValueError("a policy requires at least one attribute")
        if len(set(self.required_attributes)) != len(self.required_attributes):
            raise ValueError("duplicate attributes in policy")
        for attribute in self.required_attributes:
            check_label(attribute)


class PolicyStore:
    """Policies from a JSON file: {resource_id: [attribute, ...]}."""

    def __init__(self, policies: Mapping[str, Policy]):
        self._policies = dict(policies)

    @classmethod
    def from_file(cls, path: Path) -> "PolicyStore":
        raw = json.loads(Path(path).read_text())
        if not isinstance(raw, dict):
            raise ValueError("policy file must be a JSON object")
        policies = {
            resource_id: Policy(
                resource_id=resource_id, required_attributes=tuple(attributes)
            )
            for resource_id, attributes in raw.items()
        }
        return cls(policies)

    def get_policy(self, resource_id: str) -> Policy:
        policy = self._policies.get(resource_id)
        if policy is None:
            raise UnknownResource(f"no policy for resource {resource_id!r}")
        return policy

    def resource_ids(self) -> list[str]:
        return sorted(self._policies)


class NonceTable:
    """Single-use nonces with a bounded lifetime, bound to a resource."""

    def __init__(self, lifetime_us: int = NONCE_LIFETIME_US):
        self.lifetime_us = lifetime_us
        self._issued: dict[bytes, tuple[int, str]] = {}
        self._lock = threading.Lock()

    def issue(self, resource_id: str, clock: int) -> bytes:
        nonce = secrets.token_bytes(NONCE_LEN)
        with self._lock:
            self._issued[nonce] = (clock + self.lifetime_us, resource_id)
        return nonce

    def status(self, nonce: bytes, resource_id: str, clock: int) -> Optional[str]:
        """None when the nonce is usable, else the reason it is not."""
        with self._lock:
            entry = self._issued.get(nonce)
            if entry is None:
                return "nonce unknown or already used"
            expires, bound_resource = entry
            if clock >= expires:
                return "nonce expired"
            if bound_resource != resource_id:
                return "nonce was issued for a different resource"
        return None

    def consume(self, nonce: bytes) -> None:
        with self._lock:
            self._issued.pop(nonce, None)


@dataclass(frozen=True)
class AuthorizationResponse:
    """The subject's signed answer to a policy challenge."""

    nonce: bytes
    subject: bytes
    credential_sets: Mapping[str, tuple[Credential, ...]]
    signature: bytes

    def signing_bytes(self) -> bytes:
        return response_signing_bytes(self.nonce, self.subject, self.credential_sets)


def response_signing_bytes(
    nonce: bytes,
    subject: bytes,
    credential_sets: Mapping[str, Iterable[Credential]],
) -> bytes:
    """Canonical bytes covered by the subject's signature.

    Attributes are sorted and credentials ordered by their canonical bytes,
    so semantically equal responses sign identically.
    """
    out = bytearray()
    out += AUTHZ_CONTEXT
    out += nonce
    out += subject
    out += struct.pack(">I", len(credential_sets))
    for attribute in sorted(credential_sets):
        encoded = attribute.encode("utf-8")
        out += struct.pack(">H", len(encoded))
        out += encoded
        ordered = sorted(
            (credential.canonical_bytes() for credential in credential_sets[attribute])
        )
        out += struct.pack(">I", len(ordered))
        for blob in ordered:
            out += blob
    return bytes(out)


def build_response(
    subject: NamespaceKey,
    nonce: bytes,
    credential_sets: Mapping[str, Iterable[Credential]],
) -> AuthorizationResponse:
    sets = {
        attribute: tuple(credentials)
        for attribute, credentials in credential_sets.items()
    }
    signature = subject.sign(response_signing_bytes(nonce, subject.public_key, sets))
    return AuthorizationResponse(
        nonce=nonce,
        subject=subject.public_key,
        credential_sets=sets,
        signature=signature,
    )


@dataclass(frozen=True)
class AuthzDecision:
    decision: str  # grant | deny | error
    reasons: tuple[str, ...] = ()
    chain_summaries: tuple[str, ...] = ()

    @property
    def granted(self) -> bool:
        return self.decision == GRANT


def _summarize_chain(chain: DelegationChain) -> str:
    hops = [f"{chain.issuer.hex()[:8]}.{chain.attribute}"]
    hops += [f"{step.subject.hex()[:8]}.{'.'.join(step.trail)}" for step in chain.steps[1:]]
    leaf_bits = []
    for leaf in chain.leaves:
        if leaf.credential is not None:
            leaf_bits.append(
                f"cred {leaf.credential.issuer.hex()[:8]}.{leaf.credential.attribute}"
            )
        else:
            leaf_bits.append("subject key")
    return " -> ".join(hops) + " -> " + ", ".join(leaf_bits)


def authorize(
    verifier_pub: bytes,
    response: AuthorizationResponse,
    policy: Policy,
    backend: NameSystemBackend,
    clock: int,
    nonce_table: Optional[NonceTable] = None,
    limits: Limits = Limits(),
) -> AuthzDecision:
    """Decide a signed response against a policy.

    The verifier trusts nothing from the subject but the credentials
    themselves: it re-runs discovery from its own namespace for every
    required attribute. A Grant consumes the nonce, so replaying the same
    response cannot grant twice.
    """
    if nonce_table is not None:
        problem = nonce_table.status(response.nonce, policy.resource_id, clock)
        if problem is not None:
            return AuthzDecision(decision=DENY, reasons=(problem,))
    if len(response.subject) != KEY_LEN:
        return AuthzDecision(decision=DENY, reasons=("malformed subject key",))
    if not verify_signature(
        response.subject, response.signature, response.signing_bytes()
    ):
        return AuthzDecision(decision=DENY, reasons=("response signature invalid",))

    supplied: list[Credential] = []
    for attribute, credentials in response.credential_sets.items():
        for credential in credentials:
            if credential.subject != response.subject:
                return AuthzDecision(
                    decision=DENY,
                    reasons=(
                        f"credential under {attribute!r} names a different subject",
                    ),
                )
            if not verify_credential(credential, clock):
                return AuthzDecision(
                    decision=DENY,
                    reasons=(
                        f"credential under {attribute!r} is expired or forged",
                    ),
                )
            supplied.append(credential)

    reasons: list[str] = []
    summaries: list[str] = []
    try:
        for attribute in policy.required_attributes:
            chain = discover(
                issuer_pub=verifier_pub,
                attribute=attribute,
                subject_pub=response.subject,
                subject_creds=supplied,
                backend=backend,
                clock=clock,
                limits=limits,
            )
            if chain is None:
                reasons.append(f"no delegation chain proves {attribute!r}")
            else:
                summaries.append(_summarize_chain(chain))
    except BackendError as exc:
        return AuthzDecision(
            decision=ERROR,
            reasons=(f"name system unavailable: {exc}",),
        )

    if reasons:
        return AuthzDecision(decision=DENY, reasons=tuple(reasons))
    if nonce_table is not None:
        nonce_table.consume(response.nonce)
    return AuthzDecision(decision=GRANT, chain_summaries=tuple(summaries))


# --- HTTP verifier service ------------------------------------------------------


@dataclass
class VerifierService:
    """State behind the two HTTP endpoints."""

    verifier_pub: bytes
    policies: PolicyStore
    backend: NameSystemBackend
    clock_fn: Callable[[], int] = lambda: time.time_ns() // 1_000
    limits: Limits = field(default_factory=Limits)
    nonces: NonceTable = field(default_factory=NonceTable)

    def policy_payload(self, resource_id: str) -> dict:
        policy = self.policies.get_policy(resource_id)
        nonce = self.nonces.issue(resource_id, self.clock_fn())
        return {
            "resource_id": policy.resource_id,
            "required_attributes": list(policy.required_attributes),
            "verifier": self.verifier_pub.hex(),
            "nonce": nonce.hex(),
        }

    def authorize_payload(self, body: dict) -> tuple[int, dict]:
        try:
            resource_id = body["resource_id"]
            nonce = bytes.fromhex(body["nonce"])
            subject = bytes.fromhex(body["subject"])
            signature = bytes.fromhex(body["signature"])
            credential_sets = {
                attribute: tuple(import_json(item) for item in items)
                for attribute, items in body["credential_sets"].items()
            }
        except KeyError as exc:
            return 400, {
                "decision": ERROR,
                "reasons": [f"missing field {exc.args[0]!r}"],
                "chain_summaries": [],
            }
        except (AbdError, ValueError, TypeError, AttributeError) as exc:
            return 400, {
                "decision": ERROR,
                "reasons": [f"malformed request: {exc}"],
                "chain_summaries": [],
            }
        try:
            policy = self.policies.get_policy(resource_id)
        except UnknownResource as exc:
            return 404, {"decision": ERROR, "reasons": [str(exc)], "chain_summaries": []}
        response = AuthorizationResponse(
            nonce=nonce,
            subject=subject,
            credential_sets=credential_sets,
            signature=signature,
        )
        decision = authorize(
            verifier_pub=self.verifier_pub,
            response=response,
            policy=policy,
            backend=self.backend,
            clock=self.clock_fn(),
            nonce_table=self.nonces,
            limits=self.limits,
        )
        status = 200 if decision.decision != ERROR else 503
        return status, {
            "decision": decision.decision,
            "reasons": list(decision.reasons),
            "chain_summaries": list(decision.chain_summaries),
        }


class _Handler(BaseHTTPRequestHandler):
    service: VerifierService  # set on the subclass by make_server

    def _send(self, status: int, payload: dict) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self) -> None:  # noqa: N802 (stdlib naming)
        if not self.path.startswith("/policy/"):
            self._send(404, {"error": "not found"})
            return
        resource_id = self.path[len("/policy/") :]
        try:
            self._send(200, self.service.policy_payload(resource_id))
        except UnknownResource as exc:
            self._send(404, {"error": str(exc)})

    def do_POST(self) -> None:  # noqa: N802
        if self.path != "/authorize":
            self._send(404, {"error": "not found"})
            return
        length = int(self.headers.get("Content-Length", "0"))
        try:
            body = json.loads(self.rfile.read(length))
        except json.JSONDecodeError as exc:
            self._send(
                400,
                {"decision": ERROR, "reasons": [f"bad JSON: {exc}"], "chain_summaries": []},
            )
            return
        status, payload = self.service.authorize_payload(body)
        self._send(status, payload)

    def log_message(self, format: str, *args) -> None:
        pass  # keep the CLI quiet; decisions are reported to the client


def make_server(service: VerifierService, host: str, port: int) -> ThreadingHTTPServer:
    handler = type("BoundHandler", (_Handler,), {"service": service})
    return ThreadingHTTPServer((host, port), handler)


# --- subject-side client ----------------------------------------------------------


@dataclass(frozen=True)
class AccessOutcome:
    decision: str
    reasons: tuple[str, ...] = ()
    chain_summaries: tuple[str, ...] = ()
    unsatisfied: tuple[str, ...] = ()

    @property
    def granted(self) -> bool:
        return self.decision == GRANT


def _http_json(request: urllib.request.Request, timeout: float) -> tuple[int, dict]:
    try:
        with urllib.request.urlopen(request, timeout=timeout) as reply:
            return reply.status, json.loads(reply.read())
    except urllib.error.HTTPError as exc:
        try:
            return exc.code, json.loads(exc.read())
        except json.JSONDecodeError:
            return exc.code, {}


def request_access(
    endpoint: str,
    resource_id: str,
    subject: NamespaceKey,
    subject_creds: Iterable[Credential],
    backend: NameSystemBackend,
    clock: int,
    timeout: float = 10.0,
    limits: Limits = Limits(),
) -> AccessOutcome:
    """Full subject-side round trip against a verifier endpoint.

    Fetches the policy and nonce, collects proof credentials via local
    discovery, signs the response, and submits it. Network failures reaching
    the verifier and backend failures during collection surface as Error.
    """
    try:
        status, policy_body = _http_json(
            urllib.request.Request(f"{endpoint}/policy/{resource_id}"), timeout
        )
    except (urllib.error.URLError, OSError) as exc:
        return AccessOutcome(decision=ERROR, reasons=(f"verifier unreachable: {exc}",))
    if status != 200:
        return AccessOutcome(
            decision=ERROR,
            reasons=(policy_body.get("error", f"policy fetch failed ({status})"),),
        )
    try:
        verifier_pub = bytes.fromhex(policy_body["verifier"])
        nonce = bytes.fromhex(policy_body["nonce"])
        attributes = list(policy_body["required_attributes"])
    except (KeyError, ValueError) as exc:
        return AccessOutcome(decision=ERROR, reasons=(f"bad policy response: {exc}",))

    try:
        result = collect(
            subject_pub=subject.public_key,
            subject_creds=subject_creds,
            verifier_pub=verifier_pub,
            policy_attrs=attributes,
            backend=backend,
            clock=clock,
            limits=limits,
        )
    except CollectionIncomplete as exc:
        return AccessOutcome(decision=ERROR, reasons=(str(exc),))

    credential_sets = {
        attribute: tuple(result.chains[attribute].credentials())
        if attribute in result.chains
        else ()
        for attribute in attributes
    }
    response = build_response(subject, nonce, credential_sets)
    body = json.dumps(
        {
            "resource_id": resource_id,
            "nonce": response.nonce.hex(),
            "subject": response.subject.hex(),
            "signature": response.signature.hex(),
            "credential_sets": {
                attribute: [export_json(c) for c in credentials]
                for attribute, credentials in credential_sets.items()
            },
        }
    ).encode("utf-8")
    request = urllib.request.Request(
        f"{endpoint}/authorize",
        data=body,
        headers={"Content-Type": "application/json"},
        method="POST",
    )
    try:
        status, reply = _http_json(request, timeout)
    except (urllib.error.URLError, OSError) as exc:
        return AccessOutcome(decision=ERROR, reasons=(f"verifier unreachable: {exc}",))
    return AccessOutcome(
        decision=reply.get("decision", ERROR),
        reasons=tuple(reply.get("reasons", ())),
        chain_summaries=tuple(reply.get("chain_summaries", ())),
        unsatisfied=result.unsatisfied,
    )
