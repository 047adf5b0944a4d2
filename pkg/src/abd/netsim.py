"""Name system backends: an in-memory map and a simulated DHT.

Both backends speak the same protocol: signed record sets are stored under a
256-bit query key derived from (namespace public key, label). Writes are
accepted only when the set's signature verifies against the embedded public
key and the query key matches, so only the namespace owner can update an
entry. Storing a signature-valid EMPTY set deletes the entry: deletion is
modeled as absence, and stale copies linger only in response caches until
their TTL runs out.

The DHT simulator is single-threaded and fully deterministic for a given
rng_seed and operation sequence. Hop counts are modeled as ceil(log2(N)).
"""
from __future__ import annotations

import hashlib
import math
import random
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .core import RecordSet, ResourceRecord, check_label, verify_record_set_signature
from .errors import (
    AllReplicasDown,
    BackendUnavailable,
    BadSignature,
    NotFound,
    UnknownNode,
)


def derive_query_key(namespace_pub: bytes, label: str) -> bytes:
    """Hash of (public key, 0x00, label); the DHT address of a record set."""
    check_label(label)
    return hashlib.sha256(namespace_pub + b"\x00" + label.encode("utf-8")).digest()


@dataclass
class LookupStats:
    lookups: int = 0
    cache_hits: int = 0
    messages: int = 0
    max_hops: int = 0
    bad_signatures: int = 0

    def as_dict(self) -> dict:
        return {
            "lookups": self.lookups,
            "cache_hits": self.cache_hits,
            "messages": self.messages,
            "max_hops": self.max_hops,
            "bad_signatures": self.bad_signatures,
        }


class NameSystemBackend(ABC):
    """Pluggable name system: put/get signed record sets by query key."""

    @abstractmethod
    def put(self, query_key: bytes, record_set: RecordSet, clock: int) -> None:
        """Store (or, for an empty set, delete) a verified record set."""

    @abstractmethod
    def get(self, query_key: bytes, clock: int) -> Optional[RecordSet]:
        """Return the stored set, or None for authoritative absence."""

    @abstractmethod
    def stats(self) -> LookupStats:
        ...


def _check_put(query_key: bytes, record_set: RecordSet) -> None:
    if not verify_record_set_signature(record_set):
        raise BadSignature("record set signature does not verify")
    if derive_query_key(record_set.public_key, record_set.label) != query_key:
        raise BadSignature("query key does not match the set's (key, label)")


class InMemoryBackend(NameSystemBackend):
    """Deterministic in-process map; the reference backend for tests."""

    def __init__(self) -> None:
        self._data: dict[bytes, RecordSet] = {}
        self._stats = LookupStats()
        self._lock = threading.Lock()
        self._available = True

    def set_available(self, available: bool) -> None:
        """Fault injection for tests: an unavailable backend refuses all ops."""
        self._available = available

    def put(self, query_key: bytes, record_set: RecordSet, clock: int) -> None:
        with self._lock:
            if not self._available:
                raise BackendUnavailable("in-memory backend marked unavailable")
            _check_put(query_key, record_set)
            if record_set.records:
                self._data[query_key] = record_set
            else:
                self._data.pop(query_key, None)

    def get(self, query_key: bytes, clock: int) -> Optional[RecordSet]:
        with self._lock:
            if not self._available:
                raise BackendUnavailable("in-memory backend marked unavailable")
            self._stats.lookups += 1
            record_set = self._data.get(query_key)
            if record_set is None:
                return None
            if not verify_record_set_signature(record_set):
                self._stats.bad_signatures += 1
                return None
            if not record_set.has_live_record(clock):
                return None
            return record_set

    def stats(self) -> LookupStats:
        return self._stats


class FileBackend(InMemoryBackend):
    """In-memory map persisted to a directory, one file per query key.

    Gives separate CLI invocations a shared name system without running a
    network. Same semantics as InMemoryBackend.
    """

    def __init__(self, root: Path) -> None:
        super().__init__()
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        from .core import canonical_deserialize

        for path in sorted(self.root.glob("*.rrset")):
            try:
                record_set = canonical_deserialize(path.read_bytes())
            except Exception:
                continue  # unreadable entries are treated as absent
            if verify_record_set_signature(record_set):
                self._data[bytes.fromhex(path.stem)] = record_set

    def put(self, query_key: bytes, record_set: RecordSet, clock: int) -> None:
        from .core import canonical_serialize

        super().put(query_key, record_set, clock)
        path = self.root / f"{query_key.hex()}.rrset"
        if record_set.records:
            path.write_bytes(canonical_serialize(record_set))
        elif path.exists():
            path.unlink()


@dataclass
class DhtConfig:
    node_count: int = 32
    replication_factor: int = 5
    cache_ttl_us: int = 3_600_000_000  # 1 hour of simulated time
    rng_seed: int = 0
    republish_interval_us: int = 0  # 0 disables periodic republish in `sim run`

    @classmethod
    def from_file(cls, path: Path) -> "DhtConfig":
        """Parse a `key = value` config file; unknown keys are an error."""
        config = cls()
        valid = set(config.__dataclass_fields__)
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in valid:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            setattr(config, key, int(value.strip()))
        if config.node_count < 1:
            raise ValueError("node_count must be >= 1")
        if config.replication_factor < 1:
            raise ValueError("replication_factor must be >= 1")
        return config

    def to_file(self, path: Path) -> None:
        lines = [f"{name} = {getattr(self, name)}" for name in self.__dataclass_fields__]
        Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class _DhtNode:
    index: int
    node_id: int
    failed: bool = False
    storage: dict[bytes, RecordSet] = field(default_factory=dict)
    # query key -> (record set, absolute cache expiry)
    cache: dict[bytes, tuple[RecordSet, int]] = field(default_factory=dict)


class SimulatedDht(NameSystemBackend):
    """Consistent-hash ring with replication, caching, and failures.

    Record sets live on the ``replication_factor`` successor nodes of their
    query key. Every get enters at one live node; a hit in that node's
    response cache is served locally, otherwise the query is routed to the
    replica set and the response cached for min(cache_ttl, time to earliest
    record expiration). Failed nodes drop all state and answer nothing.
    """

    def __init__(self, config: Optional[DhtConfig] = None) -> None:
        self.config = config or DhtConfig()
        self.now_us = 0
        self._rng = random.Random(self.config.rng_seed)
        self._stats = LookupStats()
        self.nodes: list[_DhtNode] = []
        for index in range(self.config.node_count):
            digest = hashlib.sha256(
                b"abd-dht-node:%d:%d" % (self.config.rng_seed, index)
            ).digest()
            self.nodes.append(_DhtNode(index=index, node_id=int.from_bytes(digest, "big")))
        self._ring = sorted(self.nodes, key=lambda n: n.node_id)

    # --- topology ---------------------------------------------------------

    def _hops(self) -> int:
        return math.ceil(math.log2(self.config.node_count)) if self.config.node_count > 1 else 0

    def replica_nodes(self, query_key: bytes) -> list[int]:
        """Indices of the nodes assigned to hold this key, in ring order."""
        key_int = int.from_bytes(query_key, "big")
        start = 0
        while start < len(self._ring) and self._ring[start].node_id < key_int:
            start += 1
        count = min(self.config.replication_factor, len(self._ring))
        return [
            self._ring[(start + i) % len(self._ring)].index for i in range(count)
        ]

    def _check_node_ids(self, node_ids: list[int]) -> list[_DhtNode]:
        out = []
        for node_id in node_ids:
            if not 0 <= node_id < len(self.nodes):
                raise UnknownNode(f"no node with id {node_id}")
            out.append(self.nodes[node_id])
        return out

    @property
    def failure_set(self) -> set[int]:
        return {n.index for n in self.nodes if n.failed}

    def fail_nodes(self, node_ids: list[int]) -> None:
        """Failed nodes drop all stored and cached state immediately."""
        for node in self._check_node_ids(node_ids):
            node.failed = True
            node.storage.clear()
            node.cache.clear()

    def heal_nodes(self, node_ids: list[int]) -> None:
        """Healed nodes rejoin empty; data returns only via republish."""
        for node in self._check_node_ids(node_ids):
            node.failed = False

    def advance_clock(self, delta_us: int) -> None:
        """Move simulated time forward, evicting everything past its TTL."""
        if delta_us < 0:
            raise ValueError("simulated time cannot move backwards")
        self.now_us += delta_us
        for node in self.nodes:
            if node.failed:
                continue
            node.cache = {
                key: (rset, expires)
                for key, (rset, expires) in node.cache.items()
                if self.now_us < expires and rset.has_live_record(self.now_us)
            }
            node.storage = {
                key: rset
                for key, rset in node.storage.items()
                if rset.has_live_record(self.now_us)
            }

    # --- backend protocol ---------------------------------------------------

    def put(self, query_key: bytes, record_set: RecordSet, clock: int) -> None:
        _check_put(query_key, record_set)
        assigned = self._check_node_ids(self.replica_nodes(query_key))
        live = [n for n in assigned if not n.failed]
        if not live:
            raise BackendUnavailable("all replica nodes for this key are down")
        self._stats.messages += self._hops() + len(live)
        for node in live:
            if record_set.records:
                node.storage[query_key] = record_set
            else:
                node.storage.pop(query_key, None)

    def get(
        self, query_key: bytes, clock: int, entry_node: Optional[int] = None
    ) -> Optional[RecordSet]:
        self._stats.lookups += 1
        live_nodes = [n for n in self.nodes if not n.failed]
        if not live_nodes:
            raise AllReplicasDown("no live nodes in the network")
        if entry_node is None:
            entry = self._rng.choice(live_nodes)
        else:
            (entry,) = self._check_node_ids([entry_node])
            if entry.failed:
                raise AllReplicasDown(f"entry node {entry_node} is down")
        self._stats.messages += 1

        cached = entry.cache.get(query_key)
        if cached is not None:
            record_set, expires = cached
            if clock < expires and record_set.has_live_record(clock):
                self._stats.cache_hits += 1
                return record_set
            del entry.cache[query_key]

        hops = self._hops()
        self._stats.messages += hops
        self._stats.max_hops = max(self._stats.max_hops, hops)

        assigned = self._check_node_ids(self.replica_nodes(query_key))
        self._stats.messages += sum(1 for n in assigned if not n.failed)
        for node in assigned:
            if node.failed:
                continue
            record_set = node.storage.get(query_key)
            if record_set is None:
                continue
            if not verify_record_set_signature(record_set):
                # Hostile or corrupt replica: skip it, count the event.
                self._stats.bad_signatures += 1
                continue
            if not record_set.has_live_record(clock):
                continue
            ttl = self.config.cache_ttl_us
            earliest = record_set.min_expiration(clock)
            if earliest is not None:
                ttl = min(ttl, earliest - clock)
            if ttl > 0:
                entry.cache[query_key] = (record_set, clock + ttl)
            return record_set

        if any(n.failed for n in assigned):
            # Some replica that could hold the key never answered; we cannot
            # distinguish absence from unavailability.
            raise AllReplicasDown("no live replica holds the key")
        return None

    def stats(self) -> LookupStats:
        return self._stats


def resolve(
    label: str,
    namespace_pub: bytes,
    record_type: int,
    backend: NameSystemBackend,
    clock: int,
) -> list[ResourceRecord]:
    """Look up unexpired records of one type under (namespace, label).

    An existing set with no matching records yields an empty list; a missing
    set raises NotFound. Network-class failures propagate from the backend.
    """
    check_label(label)
    query_key = derive_query_key(namespace_pub, label)
    record_set = backend.get(query_key, clock)
    if record_set is None:
        raise NotFound(
            f"no record set for label {label!r} in namespace {namespace_pub.hex()[:16]}"
        )
    return [
        record
        for record in record_set.records
        if record.record_type == record_type and not record.is_expired(clock)
    ]
