"""Simulation kernel: global tick loop, tasks, message transport, metering.

One Simulation instance is one deterministic world: all randomness (drops,
duplicates, replays, jitter) comes from a single seeded generator.  Draw
order is documented at the drawing sites; the per-tick phase order is:

    1. timers due this tick        4. consumer pulls / inbox routing
    2. ready tasks                 5. ready tasks again
    3. block production + events   6. gateway expiry

Chains are stepped in creation order throughout.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass
from typing import Callable, Optional

from .bus import (
    Broker,
    Event,
    Gateway,
    InboxDedupe,
    KeyRegistry,
    SignedEventBatch,
    verify_batch,
)
from .chain import Behavior, Chain, ChainConfig, EventDraft
from .errors import MaxTicksExceeded, QuorumFailure
from .runlog import RunLog


@dataclass
class SimConfig:
    seed: int = 0
    broker_latency: int = 1
    latency_jitter: int = 0  # extra 0..jitter ticks drawn per publish/send
    direct_drop_rate: float = 0.0
    direct_timeout: int = 8  # per-attempt wait on the request/response channel
    gateway_timeout: int = 50
    node_retransmit_interval: int = 6
    node_retention: int = 120  # give up re-forwarding unbatchable events
    bus_retries: int = 5
    bus_backoff: int = 4  # linear: re-publish at +b, +2b, ... +retries*b
    lock_timeout: int = 50
    vote_timeout: int = 40
    decision_poll: int = 20
    retry_limit: int = 5
    max_ticks: int = 20_000


class Future:
    __slots__ = ("done", "value", "error")

    def __init__(self):
        self.done = False
        self.value = None
        self.error = None

    def set_result(self, value) -> None:
        if not self.done:
            self.done = True
            self.value = value

    def set_error(self, error: BaseException) -> None:
        if not self.done:
            self.done = True
            self.error = error

    def result(self):
        if self.error is not None:
            raise self.error
        return self.value


class Task:
    def __init__(self, gen):
        self.gen = gen
        self.waiting_on: Optional[Future] = None
        self.future = Future()

    @property
    def finished(self) -> bool:
        return self.future.done

    def ready(self) -> bool:
        if self.finished:
            return False
        return self.waiting_on is None or self.waiting_on.done

    def step(self) -> None:
        if self.finished:
            return
        to_send = None
        to_throw = None
        if self.waiting_on is not None:
            if self.waiting_on.error is not None:
                to_throw = self.waiting_on.error
            else:
                to_send = self.waiting_on.value
            self.waiting_on = None
        try:
            if to_throw is not None:
                awaited = self.gen.throw(to_throw)
            else:
                awaited = self.gen.send(to_send)
        except StopIteration as stop:
            self.future.set_result(stop.value)
            return
        except BaseException as exc:
            self.future.set_error(exc)
            return
        if not isinstance(awaited, Future):
            raise TypeError(f"task yielded {type(awaited).__name__}, wanted Future")
        self.waiting_on = awaited


class MessageMeter:
    def __init__(self):
        self.sent = 0
        self.delivered = 0
        self.dropped = 0
        self.duplicated = 0
        self.replayed = 0
        self.rejected_sig = 0
        self.rejected_dup = 0
        self.direct_sent = 0
        self.direct_dropped = 0
        self.recovery_reads = 0
        self.quorum_failures = 0
        self.round_trips: dict[str, int] = {}
        self.aborts: dict[str, int] = {}

    def round_trip(self, txn_id: str) -> None:
        self.round_trips[txn_id] = self.round_trips.get(txn_id, 0) + 1

    def abort(self, reason: str) -> None:
        self.aborts[reason] = self.aborts.get(reason, 0) + 1

    def snapshot(self) -> dict:
        return {
            "sent": self.sent,
            "delivered": self.delivered,
            "dropped": self.dropped,
            "duplicated": self.duplicated,
            "replayed": self.replayed,
            "rejected_sig": self.rejected_sig,
            "rejected_dup": self.rejected_dup,
            "direct_sent": self.direct_sent,
            "direct_dropped": self.direct_dropped,
            "recovery_reads": self.recovery_reads,
            "quorum_failures": self.quorum_failures,
            "round_trips": dict(sorted(self.round_trips.items())),
            "aborts": dict(sorted(self.aborts.items())),
        }


class Simulation:
    def __init__(self, config: Optional[SimConfig] = None, log: Optional[RunLog] = None):
        self.config = config or SimConfig()
        self.rng = random.Random(self.config.seed)
        self.tick = 0
        self.chains: dict[str, Chain] = {}
        self.chain_order: list[str] = []
        self.gateways: dict[str, Gateway] = {}
        self.brokers: list[Broker] = []
        self.registry = KeyRegistry()
        self.dedupe: dict[str, InboxDedupe] = {}
        self.meter = MessageMeter()
        self.log = log
        self.tasks: list[Task] = []
        self._timers: list[tuple[int, int, Callable]] = []
        self._timer_seq = 0
        # direct request/response channel handlers, per chain
        self.direct_handlers: dict[str, Callable] = {}
        # node -> gateway re-forward queues:
        # chain -> {digest: (event, {node: sig}, created_tick)}
        self._node_outbox: dict[str, dict[bytes, tuple[Event, dict[str, bytes], int]]] = {}
        self._outbox_timer_armed: set[str] = set()

    # ----------------------------------------------------------- topology

    def add_chain(self, cfg: ChainConfig) -> Chain:
        if cfg.chain_id in self.chains:
            from .errors import InvalidConfig

            raise InvalidConfig(f"duplicate chain id {cfg.chain_id}")
        chain = Chain(cfg)
        chain.observer = self
        self.chains[cfg.chain_id] = chain
        self.chain_order.append(cfg.chain_id)
        self.gateways[cfg.chain_id] = Gateway(
            cfg.chain_id,
            cfg.f,
            self.registry,
            timeout=self.config.gateway_timeout,
        )
        self.dedupe[cfg.chain_id] = InboxDedupe()
        self.registry.register_chain(
            cfg.chain_id,
            cfg.f,
            {nid: kp.verify_key for nid, kp in chain.keys.items()},
            chain.scheme,
        )
        self._node_outbox[cfg.chain_id] = {}
        return chain

    def add_broker(self, broker: Broker) -> Broker:
        self.brokers.append(broker)
        return broker

    # -------------------------------------------------------------- tasks

    def spawn(self, gen) -> Task:
        task = Task(gen)
        self.tasks.append(task)
        return task

    def call_at(self, tick: int, fn: Callable) -> None:
        self._timer_seq += 1
        heapq.heappush(self._timers, (max(tick, self.tick), self._timer_seq, fn))

    def call_later(self, delay: int, fn: Callable) -> None:
        self.call_at(self.tick + max(1, delay), fn)

    def sleep(self, delay: int) -> Future:
        fut = Future()
        self.call_later(delay, lambda: fut.set_result(None))
        return fut

    # --------------------------------------------------------------- loop

    def _run_ready_tasks(self) -> None:
        progressed = True
        while progressed:
            progressed = False
            for task in list(self.tasks):
                if task.ready():
                    task.step()
                    progressed = True
            self.tasks = [t for t in self.tasks if not t.finished]

    def step(self) -> None:
        now = self.tick
        while self._timers and self._timers[0][0] <= now:
            _, _, fn = heapq.heappop(self._timers)
            fn()
        self._run_ready_tasks()
        for chain_id in self.chain_order:
            chain = self.chains[chain_id]
            if chain.mempool:
                try:
                    produced = chain.produce_block(tick=now)
                except QuorumFailure:
                    self.meter.quorum_failures += 1
                    continue
                if produced:
                    _, drafts = produced
                    self._emit_drafts(chain, drafts)
        for chain_id in self.chain_order:
            self._deliver(chain_id)
        self._run_ready_tasks()
        for gw in self.gateways.values():
            gw.expire(now)
        self.tick = now + 1

    def quiescent(self) -> bool:
        if self._timers or self.tasks:
            return False
        if any(chain.mempool for chain in self.chains.values()):
            return False
        if any(q for broker in self.brokers for q in broker.queues.values() if q):
            return False
        if any(outbox for outbox in self._node_outbox.values()):
            return False
        return True

    def run_until_quiescent(self, max_ticks: Optional[int] = None) -> None:
        limit = max_ticks if max_ticks is not None else self.config.max_ticks
        while not self.quiescent():
            if self.tick >= limit:
                raise MaxTicksExceeded(f"still active at tick {self.tick}")
            self.step()

    def pump(self, future: Future, max_ticks: Optional[int] = None):
        """Drive the loop until the future completes; returns its result."""
        limit = self.tick + (max_ticks if max_ticks is not None else self.config.max_ticks)
        while not future.done:
            if self.tick >= limit:
                raise MaxTicksExceeded(f"future pending at tick {self.tick}")
            self.step()
        return future.result()

    # ------------------------------------------------- event emission path

    def on_block(self, chain: Chain, block) -> None:
        """Chain observer hook: record the block for audit/replay."""
        if self.log is None:
            return
        from .runlog import value_to_jsonable

        self.log.record(
            "block",
            chain=chain.chain_id,
            height=block.header.height,
            tick=block.header.tick,
            header=block.header.digest.hex(),
            state_root=block.header.state_root.hex(),
            txns=[
                {
                    "id": txn.txn_id.hex(),
                    "caller_chain": txn.caller_chain,
                    "caller_id": txn.caller_id,
                    "target": txn.target_contract,
                    "method": txn.method,
                    "status": receipt.status,
                    "error": receipt.error,
                    "xchain": receipt.xchain_txn,
                    "writes": [
                        [key, value_to_jsonable(value)] for key, value in receipt.writes
                    ],
                }
                for txn, receipt in zip(block.txns, block.receipts)
            ],
        )

    def _emit_drafts(self, chain: Chain, drafts: list[EventDraft]) -> None:
        for draft in drafts:
            event = Event(
                source_chain=chain.chain_id,
                dest_chain=draft.dest_chain,
                dest_contract=draft.dest_contract,
                source_contract=draft.source_contract,
                nonce=chain.event_nonce,
                kind=draft.kind,
                payload=draft.payload,
            )
            chain.event_nonce += 1
            self.emit_event(chain, event)

    def emit_event(self, chain: Chain, event: Event, forged_by: Optional[list[str]] = None) -> None:
        """Every (selected) node signs the digest and forwards to the gateway.

        forged_by limits signing to the given nodes: the forged-event path,
        where only colluding Byzantine nodes endorse an event that never
        executed.  Honest emission signs per each node's behavior flag.
        """
        sigs: dict[str, bytes] = {}
        node_ids = forged_by if forged_by is not None else chain.cfg.node_ids()
        for node_id in node_ids:
            behavior = chain.byzantine.get(node_id, Behavior.HONEST)
            if forged_by is None:
                if behavior == Behavior.SILENT:
                    continue
                target = event.digest
                if behavior == Behavior.EQUIVOCATE:
                    target = bytes(b ^ 0xFF for b in event.digest)
                sigs[node_id] = chain.scheme.sign(chain.keys[node_id].signing_key, target)
            else:
                sigs[node_id] = chain.scheme.sign(
                    chain.keys[node_id].signing_key, event.digest
                )
        outbox = self._node_outbox[chain.chain_id]
        outbox[event.digest] = (event, sigs, self.tick)
        self._arm_outbox_timer(chain.chain_id)
        self._forward_signatures(chain.chain_id, event, sigs)

    def _forward_signatures(self, chain_id: str, event: Event, sigs: dict[str, bytes]) -> None:
        gw = self.gateways[chain_id]
        batch = None
        for node_id in sorted(sigs):
            b = gw.collect(node_id, event, sigs[node_id], self.tick)
            if b is not None:
                batch = b
        if batch is not None:
            self._publish_batch(batch)

    def _arm_outbox_timer(self, chain_id: str) -> None:
        if chain_id in self._outbox_timer_armed:
            return
        self._outbox_timer_armed.add(chain_id)
        self.call_later(self.config.node_retransmit_interval, lambda: self._outbox_scan(chain_id))

    def _outbox_scan(self, chain_id: str) -> None:
        """Nodes re-forward unacknowledged signatures (gateway crash recovery)."""
        self._outbox_timer_armed.discard(chain_id)
        gw = self.gateways[chain_id]
        outbox = self._node_outbox[chain_id]
        done = [
            d
            for d, (_, _, created) in outbox.items()
            if d in gw.emitted or self.tick - created > self.config.node_retention
        ]
        for d in done:
            del outbox[d]
        if not outbox:
            return
        for d in list(outbox):
            event, sigs, _ = outbox[d]
            self._forward_signatures(chain_id, event, sigs)
        outbox_done = [d for d in outbox if d in gw.emitted]
        for d in outbox_done:
            del outbox[d]
        if outbox:
            self._arm_outbox_timer(chain_id)

    def _publish_batch(self, batch: SignedEventBatch) -> None:
        raw = batch.encode()
        topic = batch.event.dest_chain
        self._publish_raw(topic, raw)
        # bus-level retransmission: linear backoff, consumer dedupe absorbs copies
        for i in range(1, self.config.bus_retries + 1):
            self.call_at(
                self.tick + i * self.config.bus_backoff,
                lambda topic=topic, raw=raw: self._publish_raw(topic, raw),
            )

    def _publish_raw(self, topic: str, raw: bytes) -> None:
        # draw order: per broker in registration order (drop, dup, replay)
        self.meter.sent += 1
        latency = self.config.broker_latency
        if self.config.latency_jitter:
            latency += self.rng.randrange(self.config.latency_jitter + 1)
        for broker in self.brokers:
            before_drop = broker.metrics["dropped"]
            broker.publish(topic, raw, self.tick, latency, self.rng)
            if broker.metrics["dropped"] > before_drop:
                self.meter.dropped += 1

    # ------------------------------------------------------- delivery path

    def _deliver(self, chain_id: str) -> None:
        chain = self.chains[chain_id]
        dedupe = self.dedupe[chain_id]
        for broker in self.brokers:
            for raw in broker.pull(chain_id, self.tick):
                batch = verify_batch(raw, self.registry)
                if batch is None:
                    self.meter.rejected_sig += 1
                    if self.log is not None:
                        self.log.record(
                            "deliver", chain=chain_id, result="rejected_sig"
                        )
                    continue
                event = batch.event
                if event.dest_chain != chain_id:
                    # a broker misrouted the batch onto the wrong topic
                    self.meter.rejected_sig += 1
                    if self.log is not None:
                        self.log.record(
                            "deliver", chain=chain_id, result="misrouted"
                        )
                    continue
                if not dedupe.accept(event.source_chain, event.nonce):
                    self.meter.rejected_dup += 1
                    if self.log is not None:
                        self.log.record(
                            "deliver",
                            chain=chain_id,
                            source_chain=event.source_chain,
                            nonce=event.nonce,
                            result="duplicate",
                        )
                    continue
                self.meter.delivered += 1
                if self.log is not None:
                    self.log.record(
                        "deliver",
                        chain=chain_id,
                        source_chain=event.source_chain,
                        nonce=event.nonce,
                        event_kind=event.kind,
                        dest_contract=event.dest_contract,
                        result="accepted",
                    )
                chain.enqueue_inbox_event(
                    event.encode(),
                    source_chain=event.source_chain,
                    source_contract=event.source_contract,
                    dest_contract=event.dest_contract,
                )

    # ------------------------------------------------ direct req/resp path

    def direct_request(
        self,
        target_chain: str,
        payload: bytes,
        rt_txn: Optional[str] = None,
        recovery: bool = False,
    ) -> Future:
        """Point-to-point request to a chain's protocol handler.

        Both legs draw drop faults (in order: request, response); retries up
        to retry_limit with doubled per-attempt timeout.  The future yields
        the raw response bytes, or None after the final attempt times out.
        """
        fut = Future()
        self._direct_attempt(target_chain, payload, fut, attempt=0, rt_txn=rt_txn, recovery=recovery)
        return fut

    def _direct_attempt(
        self,
        target_chain: str,
        payload: bytes,
        fut: Future,
        attempt: int,
        rt_txn: Optional[str],
        recovery: bool,
    ) -> None:
        if fut.done:
            return
        if attempt > self.config.retry_limit:
            fut.set_result(None)
            return
        timeout = self.config.direct_timeout * (2**attempt)
        self.meter.direct_sent += 1
        req_dropped = (
            self.config.direct_drop_rate > 0
            and self.rng.random() < self.config.direct_drop_rate
        )
        latency = 1 + (
            self.rng.randrange(self.config.latency_jitter + 1)
            if self.config.latency_jitter
            else 0
        )
        if req_dropped:
            self.meter.direct_dropped += 1
        else:
            self.call_later(
                latency,
                lambda: self._direct_serve(target_chain, payload, fut, rt_txn, recovery),
            )
        self.call_later(
            timeout,
            lambda: self._direct_attempt(
                target_chain, payload, fut, attempt + 1, rt_txn, recovery
            ),
        )

    def _direct_serve(
        self,
        target_chain: str,
        payload: bytes,
        fut: Future,
        rt_txn: Optional[str],
        recovery: bool,
    ) -> None:
        if fut.done:
            return
        handler = self.direct_handlers.get(target_chain)
        if handler is None:
            return
        response = handler(payload, self.tick)
        if response is None:
            return
        resp_dropped = (
            self.config.direct_drop_rate > 0
            and self.rng.random() < self.config.direct_drop_rate
        )
        if resp_dropped:
            self.meter.direct_dropped += 1
            return
        latency = 1 + (
            self.rng.randrange(self.config.latency_jitter + 1)
            if self.config.latency_jitter
            else 0
        )

        def complete():
            if fut.done:
                return
            if rt_txn is not None:
                self.meter.round_trip(rt_txn)
            if recovery:
                self.meter.recovery_reads += 1
            fut.set_result(response)

        self.call_later(latency, complete)

    # ------------------------------------------------------------- metrics

    def final_state_roots(self) -> dict[str, str]:
        return {
            chain_id: self.chains[chain_id].blocks[-1].header.state_root.hex()
            for chain_id in self.chain_order
        }

    def blocks_per_chain(self) -> dict[str, int]:
        return {cid: self.chains[cid].height for cid in self.chain_order}
