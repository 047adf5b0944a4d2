"""Exception taxonomy shared across the package.

Network-class failures (anything that means "we could not find out") derive
from BackendError so callers can distinguish "denied" from "unknown".
"""
from __future__ import annotations


class AbdError(Exception):
    """Base class for all domain errors raised by this package."""


class InvalidLabel(AbdError):
    """Label does not match ``[a-z0-9_-]{1,63}``."""


class MissingPrivateKey(AbdError):
    """A signing operation was attempted with a public-only key."""


class DecodeError(AbdError):
    """Byte-level decoding failed; carries the offset of the first bad byte."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class MalformedRecordSet(AbdError):
    """A record set carries a payload its record type cannot decode."""


class BadSignature(AbdError):
    """Signature verification failed where a valid signature is mandatory."""


class NotFound(AbdError):
    """Authoritative absence: the name system does not hold this entry."""


class BackendError(AbdError):
    """Network-class failure. The result is unknown, not a denial."""


class BackendUnavailable(BackendError):
    """The backend refused or could not accept the operation."""


class AllReplicasDown(BackendError):
    """Timeout-class: every node that could hold the key is unreachable."""


class UnknownNode(AbdError):
    """A simulator operation referenced a node id outside the network."""


class ParseError(AbdError):
    """Delegation expression text is malformed; carries the position."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (position {position})")
        self.position = position


class UnknownPetname(AbdError):
    """A local petname has no entry in the petname table."""


class DuplicateDelegation(AbdError):
    """The identical delegation expression is already present under the label."""


class TrailTooLong(AbdError):
    """A rewritten attribute trail exceeded the configured maximum length."""


class LimitExceeded(AbdError):
    """Discovery hit a resource limit; ``limit`` names which one."""

    def __init__(self, limit: str, value: int):
        super().__init__(f"limit exceeded: {limit}={value}")
        self.limit = limit
        self.value = value


class JsonError(AbdError):
    """Credential JSON is malformed; ``field`` names the offending field."""

    def __init__(self, message: str, field: str):
        super().__init__(message)
        self.field = field


class CorruptStore(AbdError):
    """An on-disk entry failed its signature check and was quarantined."""


class UnknownResource(AbdError):
    """No policy is configured for the requested resource id."""


class CollectionIncomplete(BackendError):
    """Credential collection aborted on a network-class failure.

    Distinguishes "no chain exists in what we could resolve" (a plain
    unsatisfied attribute) from "we could not resolve enough to know".
    """

    def __init__(self, attribute: str, cause: Exception):
        super().__init__(f"collection failed at attribute {attribute!r}: {cause}")
        self.attribute = attribute
        self.cause = cause


class DataDirNotEmpty(AbdError):
    """Refusing to initialize a fixture into a non-empty data directory."""
