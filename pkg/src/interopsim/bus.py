"""Cross-chain event bus: signed events, per-chain gateways, untrusted brokers.

Events carry source/destination chain and contract names plus a per-source
nonce.  A gateway batches f+1 node signatures over an event digest before
publishing; brokers are untrusted queues with injectable faults (drop,
duplicate, replay, forge); consumers pull per tick, verify signatures
against the source chain's published key set, and deduplicate by
(source_chain, nonce).
"""

from __future__ import annotations

import base64
from dataclasses import dataclass
from typing import Optional

from .errors import EncodingError
from .values import digest, lp, lps, read_lp, read_lps

EVENT_VERSION = 1

# protocol kind bytes
KIND_READ_REQ = 1
KIND_READ_RESP = 2
KIND_MT_PREPARE = 3
KIND_MT_VOTE = 4
KIND_MT_DECIDE = 5
KIND_GT_PREPARE = 6
KIND_GT_VOTE = 7
KIND_GT_DECIDE = 8
# application events use kinds >= 16
KIND_APP_BASE = 16


@dataclass(frozen=True)
class Event:
    source_chain: str
    dest_chain: str
    source_contract: str
    dest_contract: str
    nonce: int
    kind: int
    payload: bytes
    version: int = EVENT_VERSION

    def encode(self) -> bytes:
        return b"".join(
            [
                bytes([self.version]),
                lps(self.source_chain),
                lps(self.dest_chain),
                lps(self.source_contract),
                lps(self.dest_contract),
                self.nonce.to_bytes(8, "big"),
                bytes([self.kind]),
                lp(self.payload),
            ]
        )

    @property
    def digest(self) -> bytes:
        return digest(self.encode())

    @classmethod
    def decode(cls, data: bytes, offset: int = 0) -> "Event":
        event, end = cls.decode_from(data, offset)
        if end != len(data):
            raise EncodingError("trailing bytes after event")
        return event

    @classmethod
    def decode_from(cls, data: bytes, offset: int = 0) -> tuple["Event", int]:
        if offset >= len(data):
            raise EncodingError("truncated event")
        version = data[offset]
        offset += 1
        source_chain, offset = read_lps(data, offset)
        dest_chain, offset = read_lps(data, offset)
        source_contract, offset = read_lps(data, offset)
        dest_contract, offset = read_lps(data, offset)
        if offset + 9 > len(data):
            raise EncodingError("truncated event nonce/kind")
        nonce = int.from_bytes(data[offset : offset + 8], "big")
        kind = data[offset + 8]
        offset += 9
        payload, offset = read_lp(data, offset)
        return (
            cls(
                source_chain=source_chain,
                dest_chain=dest_chain,
                source_contract=source_contract,
                dest_contract=dest_contract,
                nonce=nonce,
                kind=kind,
                payload=payload,
                version=version,
            ),
            offset,
        )


@dataclass(frozen=True)
class SignedEventBatch:
    event: Event
    signatures: tuple[tuple[str, bytes], ...]

    def encode(self) -> bytes:
        parts = [self.event.encode(), len(self.signatures).to_bytes(2, "big")]
        for node_id, sig in self.signatures:
            parts.append(lps(node_id))
            parts.append(lp(sig))
        return b"".join(parts)

    @classmethod
    def decode(cls, data: bytes) -> "SignedEventBatch":
        event, offset = Event.decode_from(data, 0)
        if offset + 2 > len(data):
            raise EncodingError("truncated batch count")
        n = int.from_bytes(data[offset : offset + 2], "big")
        offset += 2
        sigs = []
        for _ in range(n):
            node_id, offset = read_lps(data, offset)
            sig, offset = read_lp(data, offset)
            sigs.append((node_id, sig))
        if offset != len(data):
            raise EncodingError("trailing bytes after batch")
        return cls(event=event, signatures=tuple(sigs))


class KeyRegistry:
    """Out-of-band distribution of each chain's node verify keys and f."""

    def __init__(self):
        self._chains: dict[str, tuple[int, dict[str, bytes], object]] = {}

    def register_chain(self, chain_id: str, f: int, verify_keys: dict[str, bytes], scheme) -> None:
        self._chains[chain_id] = (f, dict(verify_keys), scheme)

    def f_of(self, chain_id: str) -> int:
        return self._chains[chain_id][0]

    def known(self, chain_id: str) -> bool:
        return chain_id in self._chains

    def verify(self, chain_id: str, node_id: str, message: bytes, sig: bytes) -> bool:
        entry = self._chains.get(chain_id)
        if entry is None:
            return False
        _, keys, scheme = entry
        key = keys.get(node_id)
        if key is None:
            return False
        return scheme.verify(key, message, sig)

    def count_valid(self, chain_id: str, message: bytes, sigs) -> int:
        seen = set()
        for node_id, sig in sigs:
            if node_id in seen:
                continue
            if self.verify(chain_id, node_id, message, sig):
                seen.add(node_id)
        return len(seen)


@dataclass
class BrokerFaults:
    drop_rate: float = 0.0
    duplicate_rate: float = 0.0
    replay_rate: float = 0.0
    forge: bool = False


class Broker:
    """Untrusted pub/sub queue; topic = destination chain id."""

    def __init__(self, broker_id: str, faults: Optional[BrokerFaults] = None):
        self.broker_id = broker_id
        self.faults = faults or BrokerFaults()
        self.queues: dict[str, list[tuple[int, bytes]]] = {}
        self.history: list[tuple[str, bytes]] = []
        self.metrics: dict[str, int] = {
            "published": 0,
            "dropped": 0,
            "duplicated": 0,
            "replayed": 0,
            "forged": 0,
        }

    def _enqueue(self, topic: str, due: int, raw: bytes) -> None:
        self.queues.setdefault(topic, []).append((due, raw))

    def publish(self, topic: str, raw: bytes, now: int, latency: int, rng) -> None:
        """Queue one batch, subject to this broker's fault profile.

        RNG draw order per publish: drop, duplicate, replay, forge.
        """
        self.metrics["published"] += 1
        if self.faults.drop_rate > 0 and rng.random() < self.faults.drop_rate:
            self.metrics["dropped"] += 1
            return
        self._enqueue(topic, now + latency, raw)
        self.history.append((topic, raw))
        if self.faults.duplicate_rate > 0 and rng.random() < self.faults.duplicate_rate:
            self.metrics["duplicated"] += 1
            self._enqueue(topic, now + latency + 1, raw)
        if (
            self.faults.replay_rate > 0
            and self.history
            and rng.random() < self.faults.replay_rate
        ):
            old_topic, old_raw = self.history[rng.randrange(len(self.history))]
            self.metrics["replayed"] += 1
            self._enqueue(old_topic, now + latency + 1, old_raw)
        if self.faults.forge:
            self.metrics["forged"] += 1
            self._enqueue(topic, now + latency, _tamper(raw))

    def pull(self, topic: str, now: int) -> list[bytes]:
        queue = self.queues.get(topic)
        if not queue:
            return []
        due = [raw for tick, raw in queue if tick <= now]
        self.queues[topic] = [(tick, raw) for tick, raw in queue if tick > now]
        return due


def _tamper(raw: bytes) -> bytes:
    # flip one payload-ish byte; the digest check at the consumer must catch it
    if not raw:
        return raw
    pos = len(raw) // 2
    return raw[:pos] + bytes([raw[pos] ^ 0xA5]) + raw[pos + 1 :]


class FileBroker(Broker):
    """Broker whose published entries also go to an append-only log.

    recover() re-enqueues everything from the log; consumer-side nonce
    dedupe turns the resulting at-least-once feed back into at-most-once.
    """

    def __init__(self, broker_id: str, path: str, faults: Optional[BrokerFaults] = None):
        super().__init__(broker_id, faults)
        self.path = path

    def _enqueue(self, topic: str, due: int, raw: bytes) -> None:
        super()._enqueue(topic, due, raw)
        with open(self.path, "a", encoding="ascii") as fh:
            fh.write(f"{due} {topic} {base64.b64encode(raw).decode('ascii')}\n")

    @classmethod
    def recover(cls, broker_id: str, path: str) -> "FileBroker":
        broker = cls.__new__(cls)
        Broker.__init__(broker, broker_id)
        broker.path = path
        try:
            with open(path, "r", encoding="ascii") as fh:
                for line in fh:
                    parts = line.strip().split(" ", 2)
                    if len(parts) != 3:
                        continue
                    due, topic, b64 = parts
                    Broker._enqueue(broker, topic, int(due), base64.b64decode(b64))
        except FileNotFoundError:
            pass
        return broker


class Gateway:
    """Per-chain relay batching f+1 node signatures over one event digest."""

    def __init__(self, chain_id: str, f: int, registry: KeyRegistry, timeout: int = 50):
        self.chain_id = chain_id
        self.f = f
        self.registry = registry
        self.timeout = timeout
        self.pending: dict[bytes, dict] = {}
        self.emitted: dict[bytes, bytes] = {}  # digest -> batch wire form
        self.invalid_signatures = 0

    def collect(
        self, node_id: str, event: Event, sig: bytes, now: int
    ) -> Optional[SignedEventBatch]:
        d = event.digest
        if d in self.emitted:
            return None
        if not self.registry.verify(self.chain_id, node_id, d, sig):
            self.invalid_signatures += 1
            return None
        entry = self.pending.setdefault(
            d, {"event": event, "sigs": {}, "since": now}
        )
        entry["sigs"][node_id] = sig
        if len(entry["sigs"]) >= self.f + 1:
            batch = SignedEventBatch(
                event=event,
                signatures=tuple(sorted(entry["sigs"].items())),
            )
            del self.pending[d]
            self.emitted[d] = batch.encode()
            return batch
        return None

    def expire(self, now: int) -> None:
        stale = [d for d, e in self.pending.items() if now - e["since"] > self.timeout]
        for d in stale:
            del self.pending[d]

    def crash(self) -> None:
        """Full state loss; node re-forwarding rebuilds batches."""
        self.pending.clear()
        self.emitted.clear()


class InboxDedupe:
    """Per-destination record of accepted (source_chain, nonce) pairs."""

    def __init__(self):
        self.seen: set[tuple[str, int]] = set()

    def accept(self, source_chain: str, nonce: int) -> bool:
        key = (source_chain, nonce)
        if key in self.seen:
            return False
        self.seen.add(key)
        return True


def verify_batch(raw: bytes, registry: KeyRegistry) -> Optional[SignedEventBatch]:
    """Decode and authenticate one pulled batch; None if it must be dropped."""
    try:
        batch = SignedEventBatch.decode(raw)
    except EncodingError:
        return None
    event = batch.event
    if event.version != EVENT_VERSION or not registry.known(event.source_chain):
        return None
    need = registry.f_of(event.source_chain) + 1
    if registry.count_valid(event.source_chain, event.digest, batch.signatures) < need:
        return None
    return batch
