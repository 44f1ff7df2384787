"""Simulated permissioned blockchain.

One sequencer per chain, FIFO mempool, no fees.  Consensus is abstracted:
block finality is sequencer ordering plus collection of 2f+1 node
signatures over the header digest.  State is a versioned key-value map
(version = (block height, txn index)) with a Merkle root in every header.

Keys are dotted strings namespaced as "<contract_id>.<suffix>"; system
keys live under "sys.".  Contracts are native deterministic handlers.
"""

from __future__ import annotations

import base64
import bisect
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

from .crypto import Keypair, get_scheme
from .errors import (
    DuplicateContract,
    DuplicateNonce,
    EncodingError,
    FutureHeight,
    InvalidConfig,
    InvalidRange,
    LockConflict,
    PolicyDenied,
    QuorumFailure,
    UnknownContract,
)
from .merkle import MerkleMap, MerkleProof, root_of_digests
from .values import (
    Value,
    decode_value,
    decode_values,
    digest,
    encode_value,
    encode_values,
    lps,
    read_lps,
)

ZERO_DIGEST = b"\x00" * 32

Version = tuple[int, int]  # (block_height, txn_index_within_block)


class Behavior(str, Enum):
    HONEST = "honest"
    SILENT = "silent"
    EQUIVOCATE = "equivocate"
    FORGE = "forge"


@dataclass
class ChainConfig:
    chain_id: str
    n: int
    f: int
    scheme: str = "hmac"
    byzantine: dict[str, Behavior] = field(default_factory=dict)

    def validate(self) -> None:
        if not self.chain_id:
            raise InvalidConfig("chain_id must be non-empty")
        if self.n < 3 * self.f + 1:
            raise InvalidConfig(f"n={self.n} violates n >= 3f+1 with f={self.f}")
        if self.f < 0 or self.n <= 0:
            raise InvalidConfig("n must be positive and f non-negative")
        for node_id in self.byzantine:
            if node_id not in self.node_ids():
                raise InvalidConfig(f"unknown byzantine node {node_id}")

    def node_ids(self) -> list[str]:
        return [f"{self.chain_id}:node{i}" for i in range(self.n)]

    @property
    def quorum(self) -> int:
        return 2 * self.f + 1


@dataclass(frozen=True)
class Transaction:
    caller_chain: str
    caller_id: str
    target_contract: str
    method: str
    args: tuple[Value, ...]
    nonce: int

    def encode(self) -> bytes:
        return b"".join(
            [
                lps(self.caller_chain),
                lps(self.caller_id),
                lps(self.target_contract),
                lps(self.method),
                encode_values(list(self.args)),
                self.nonce.to_bytes(8, "big"),
            ]
        )

    @property
    def txn_id(self) -> bytes:
        return digest(self.encode())


@dataclass(frozen=True)
class BlockHeader:
    chain_id: str
    height: int
    prev_digest: bytes
    txn_root: bytes
    state_root: bytes
    tick: int

    def encode(self) -> bytes:
        return b"".join(
            [
                lps(self.chain_id),
                self.height.to_bytes(8, "big"),
                self.prev_digest,
                self.txn_root,
                self.state_root,
                self.tick.to_bytes(8, "big"),
            ]
        )

    @property
    def digest(self) -> bytes:
        return digest(self.encode())


@dataclass(frozen=True)
class QuorumCert:
    header_digest: bytes
    signatures: tuple[tuple[str, bytes], ...]  # sorted by node_id


@dataclass(frozen=True)
class Receipt:
    txn_id: bytes
    status: str  # "ok" | "failed"
    error: str = ""
    writes: tuple[tuple[str, Value], ...] = ()
    # cross-chain transaction this receipt's writes settle, if any
    xchain_txn: str = ""


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    txns: tuple[Transaction, ...]
    receipts: tuple[Receipt, ...]
    cert: QuorumCert


@dataclass(frozen=True)
class EventDraft:
    """Outbox entry produced by contract execution; the bus assigns nonces."""

    dest_chain: str
    dest_contract: str
    kind: int
    payload: bytes
    source_contract: str


class Contract:
    """Deterministic handler bundle.

    handlers: method name -> fn(ctx, args); mutate state via ctx.put and may
    emit events.  query_handlers: read-only fns(view, args) -> Value used by
    cross-chain verified reads.  on_event handles inbox events.
    """

    contract_id = ""
    handlers: dict[str, Callable] = {}
    query_handlers: dict[str, Callable] = {}

    def on_event(self, ctx: "ExecContext", event) -> None:
        raise PolicyDenied("contract accepts no events")


class StateView:
    """Read-only snapshot interface handed to query handlers."""

    def __init__(self, chain: "Chain", contract_id: str, height: Optional[int] = None):
        self._chain = chain
        self._cid = contract_id
        self._height = height

    def get(self, key: str) -> Value:
        return self._chain.read_state(f"{self._cid}.{key}", self._height)

    def history(self, prefix: str, frm: int, to: int):
        return self._chain.get_history(f"{self._cid}.{prefix}", frm, to)

    @property
    def height(self) -> int:
        return self._height if self._height is not None else self._chain.height


class ExecContext:
    """Per-transaction execution context for contract handlers."""

    def __init__(self, chain: "Chain", contract_id: str, txn: Transaction, height: int):
        self.chain = chain
        self.contract_id = contract_id
        self.txn = txn
        self.height = height
        self.caller_chain = txn.caller_chain
        self.caller_id = txn.caller_id
        self.writes: dict[str, Value] = {}
        self.events: list[EventDraft] = []

    # -- state access, relative to the contract namespace --

    def get(self, key: str) -> Value:
        full = f"{self.contract_id}.{key}"
        if full in self.writes:
            return self.writes[full]
        return self.chain.current_value(full)

    def put(self, key: str, value: Value) -> None:
        self.writes[f"{self.contract_id}.{key}"] = value

    def history(self, prefix: str, frm: int, to: int):
        return self.chain.get_history(f"{self.contract_id}.{prefix}", frm, to)

    def emit(self, dest_chain: str, dest_contract: str, kind: int, payload: bytes) -> None:
        self.events.append(
            EventDraft(
                dest_chain=dest_chain,
                dest_contract=dest_contract,
                kind=kind,
                payload=payload,
                source_contract=self.contract_id,
            )
        )

    # -- access control delegation (the system contract of the policy engine) --

    def check_access(self, action: str, resource: str):
        return self.chain.evaluate_policy(
            self.contract_id,
            action,
            resource,
            self.caller_id,
            self.caller_chain,
            self.height,
        )

    def require_access(self, action: str, resource: str) -> None:
        decision = self.check_access(action, resource)
        if not decision.allowed:
            raise PolicyDenied(decision.reason)


class LockTable:
    """Exclusive locks on exact keys and on key prefixes (predicate locks)."""

    def __init__(self):
        self.exact: dict[str, str] = {}  # key -> owner txn id (hex)
        self.prefix: dict[str, str] = {}

    def conflicts(self, key: str, owner: str) -> bool:
        held = self.exact.get(key)
        if held is not None and held != owner:
            return True
        for p, o in self.prefix.items():
            if o != owner and key.startswith(p):
                return True
        return False

    def prefix_conflicts(self, prefix: str, owner: str) -> bool:
        for k, o in self.exact.items():
            if o != owner and k.startswith(prefix):
                return True
        for p, o in self.prefix.items():
            if o != owner and (p.startswith(prefix) or prefix.startswith(p)):
                return True
        return False

    def try_lock(self, key: str, owner: str) -> bool:
        if self.conflicts(key, owner):
            return False
        self.exact[key] = owner
        return True

    def try_lock_prefix(self, prefix: str, owner: str) -> bool:
        if self.prefix_conflicts(prefix, owner):
            return False
        self.prefix[prefix] = owner
        return True

    def release_owner(self, owner: str) -> int:
        n = 0
        for k in [k for k, o in self.exact.items() if o == owner]:
            del self.exact[k]
            n += 1
        for p in [p for p, o in self.prefix.items() if o == owner]:
            del self.prefix[p]
            n += 1
        return n

    def empty(self) -> bool:
        return not self.exact and not self.prefix


class Chain:
    """One simulated blockchain instance."""

    def __init__(self, cfg: ChainConfig):
        cfg.validate()
        self.cfg = cfg
        self.chain_id = cfg.chain_id
        self.scheme = get_scheme(cfg.scheme)
        self.keys: dict[str, Keypair] = {
            node_id: self.scheme.keygen(f"{cfg.chain_id}|{node_id}".encode())
            for node_id in cfg.node_ids()
        }
        self.byzantine: dict[str, Behavior] = dict(cfg.byzantine)

        # versioned state
        self._current: dict[str, tuple[Value, Version]] = {}
        self._history: dict[str, list[tuple[Version, Value]]] = {}
        self._version_log: list[tuple[Version, str, Value]] = []

        self.blocks: list[Block] = []
        self.mempool: list[Transaction] = []
        self._nonces: set[tuple[str, str, int]] = set()
        self._auto_nonce: dict[tuple[str, str], int] = {}

        self.contracts: dict[str, Contract] = {}
        # system targets dispatched outside the contract table
        self.system_handlers: dict[str, Callable] = {}

        self.locks = LockTable()
        self.event_nonce = 0
        self._policy_cache: dict[str, object] = {}

        # execution overlay, populated only while a block is being produced
        self._overlay: Optional[dict[str, tuple[Value, Version]]] = None
        self._overlay_log: list[tuple[Version, str, Value]] = []
        self._block_policy_snapshot: Optional[dict[str, Value]] = None

        # hooks installed by the simulation (policy engine, observers)
        self.policy_evaluator = None  # fn(policy_src, request, ctx) -> Decision
        self.observer = None  # RunLog-ish sink with on_block(chain, block)

        self._produce_genesis()

    # ------------------------------------------------------------------ state

    def current_value(self, key: str) -> Value:
        if self._overlay is not None and key in self._overlay:
            return self._overlay[key][0]
        entry = self._current.get(key)
        return entry[0] if entry else None

    def current_version(self, key: str) -> Optional[Version]:
        if self._overlay is not None and key in self._overlay:
            return self._overlay[key][1]
        entry = self._current.get(key)
        return entry[1] if entry else None

    @property
    def height(self) -> int:
        return self.blocks[-1].header.height if self.blocks else 0

    def read_state(self, key: str, height: Optional[int] = None) -> Value:
        if height is None:
            entry = self._current.get(key)
            return entry[0] if entry else None
        if height > self.height:
            raise FutureHeight(f"height {height} > current {self.height}")
        hist = self._history.get(key)
        if not hist:
            return None
        # last version with block height <= height
        idx = bisect.bisect_right(hist, ((height, 1 << 62), None))
        if idx == 0:
            return None
        return hist[idx - 1][1]

    def history_ceiling(self) -> int:
        """Highest height readable right now (the in-production block counts)."""
        return self.height + (1 if self._overlay is not None else 0)

    def get_history(
        self, key_prefix: str, from_height: int, to_height: int
    ) -> list[tuple[str, Value, Version]]:
        if from_height > to_height or from_height < 0 or to_height > self.history_ceiling():
            raise InvalidRange(
                f"bad range [{from_height}, {to_height}] at height {self.height}"
            )
        out = []
        for version, key, value in self._version_log:
            if from_height <= version[0] <= to_height and key.startswith(key_prefix):
                out.append((key, value, version))
        if self._overlay is not None:
            for version, key, value in self._overlay_log:
                if from_height <= version[0] <= to_height and key.startswith(key_prefix):
                    out.append((key, value, version))
        out.sort(key=lambda e: (e[2], e[0]))
        return out

    def latest_version_under(self, prefix: str) -> Version:
        """Newest write version under a key prefix; (0, 0) when none."""
        best = (0, 0)
        for key, (_, version) in self._current.items():
            if key.startswith(prefix) and version > best:
                best = version
        return best

    def state_items(self, prefix: str = "") -> list[tuple[str, Value, Version]]:
        out = []
        for key in sorted(self._current):
            if key.startswith(prefix):
                value, version = self._current[key]
                out.append((key, value, version))
        return out

    def current_items(self, prefix: str = "") -> list[tuple[str, Value, Version]]:
        """Like state_items but merged with the in-production overlay."""
        if self._overlay is None:
            return self.state_items(prefix)
        merged = dict(self._current)
        merged.update(self._overlay)
        return [
            (key, merged[key][0], merged[key][1])
            for key in sorted(merged)
            if key.startswith(prefix)
        ]

    def _snapshot_at(self, height: int) -> dict[bytes, Value]:
        snap: dict[bytes, Value] = {}
        for key, hist in self._history.items():
            idx = bisect.bisect_right(hist, ((height, 1 << 62), None))
            if idx:
                snap[key.encode("utf-8")] = hist[idx - 1][1]
        return snap

    def get_proof(self, key: str, height: Optional[int] = None) -> MerkleProof:
        if height is None:
            height = self.height
        if height > self.height:
            raise FutureHeight(f"height {height} > current {self.height}")
        tree = MerkleMap(self._snapshot_at(height))
        return tree.prove(key.encode("utf-8"), root_height=height)

    def state_root_at(self, height: int) -> bytes:
        if height > self.height:
            raise FutureHeight(f"height {height} > current {self.height}")
        return self.blocks[height].header.state_root

    def header_at(self, height: int) -> BlockHeader:
        return self.blocks[height].header

    def cert_at(self, height: int) -> QuorumCert:
        return self.blocks[height].cert

    # ------------------------------------------------------------- contracts

    def register_contract(self, contract: Contract) -> None:
        cid = contract.contract_id
        if not cid or cid in self.contracts:
            raise DuplicateContract(f"contract {cid!r} already registered")
        self.contracts[cid] = contract
        self.submit_sys_txn("sys.registry", "register", [cid])

    def contract_active(self, cid: str, snapshot: Optional[dict] = None) -> bool:
        marker = f"sys.contract.{cid}"
        if snapshot is not None:
            return snapshot.get(marker, False) is True
        entry = self._current.get(marker)
        return entry is not None and entry[0] is True

    # ------------------------------------------------------------- mempool

    def submit_transaction(self, txn: Transaction) -> bytes:
        key = (txn.caller_chain, txn.caller_id, txn.nonce)
        if key in self._nonces:
            raise DuplicateNonce(f"nonce {txn.nonce} reused by {txn.caller_id}")
        if not txn.target_contract.startswith("sys.") and txn.target_contract not in self.contracts:
            raise UnknownContract(txn.target_contract)
        self._nonces.add(key)
        self.mempool.append(txn)
        return txn.txn_id

    def next_nonce(self, caller_chain: str, caller_id: str) -> int:
        k = (caller_chain, caller_id)
        self._auto_nonce[k] = self._auto_nonce.get(k, 0) + 1
        return self._auto_nonce[k]

    def submit_sys_txn(
        self, target: str, method: str, args: list[Value], caller_id: str = "sys"
    ) -> bytes:
        txn = Transaction(
            caller_chain=self.chain_id,
            caller_id=caller_id,
            target_contract=target,
            method=method,
            args=tuple(args),
            nonce=self.next_nonce(self.chain_id, caller_id),
        )
        return self.submit_transaction(txn)

    def submit_call(
        self, caller_id: str, contract: str, method: str, args: list[Value]
    ) -> bytes:
        txn = Transaction(
            caller_chain=self.chain_id,
            caller_id=caller_id,
            target_contract=contract,
            method=method,
            args=tuple(args),
            nonce=self.next_nonce(self.chain_id, caller_id),
        )
        return self.submit_transaction(txn)

    def enqueue_inbox_event(self, event_wire: bytes, source_chain: str, source_contract: str, dest_contract: str) -> None:
        txn = Transaction(
            caller_chain=source_chain,
            caller_id=source_contract,
            target_contract=dest_contract,
            method="__event__",
            args=(event_wire,),
            nonce=self.next_nonce(source_chain, source_contract),
        )
        self.submit_transaction(txn)

    # ------------------------------------------------------------ production

    def _produce_genesis(self) -> None:
        header = BlockHeader(
            chain_id=self.chain_id,
            height=0,
            prev_digest=ZERO_DIGEST,
            txn_root=root_of_digests([]),
            state_root=MerkleMap({}).root,
            tick=0,
        )
        # genesis is a config artifact; behavior flags model runtime faults
        cert = self._certify(header, ignore_byzantine=True)
        self.blocks.append(Block(header=header, txns=(), receipts=(), cert=cert))

    def _certify(self, header: BlockHeader, ignore_byzantine: bool = False) -> QuorumCert:
        hd = header.digest
        sigs = []
        for node_id in self.cfg.node_ids():
            behavior = self.byzantine.get(node_id, Behavior.HONEST)
            if ignore_byzantine:
                behavior = Behavior.HONEST
            if behavior == Behavior.SILENT:
                continue
            target = hd
            if behavior == Behavior.EQUIVOCATE:
                target = bytes(b ^ 0xFF for b in hd)
            sigs.append((node_id, self.scheme.sign(self.keys[node_id].signing_key, target)))
        valid = [
            (node_id, sig)
            for node_id, sig in sigs
            if self.scheme.verify(self.keys[node_id].verify_key, hd, sig)
        ]
        if len(valid) < self.cfg.quorum:
            raise QuorumFailure(
                f"{len(valid)} valid signatures < quorum {self.cfg.quorum}"
            )
        return QuorumCert(header_digest=hd, signatures=tuple(sorted(valid)))

    def produce_block(self, tick: int = 0) -> Optional[tuple[Block, list[EventDraft]]]:
        if not self.mempool:
            return None
        txns = tuple(self.mempool)
        self.mempool = []
        height = self.height + 1

        policy_snapshot = {
            k: v for k, (v, _) in self._current.items() if k.startswith("sys.policy.")
        }
        active_snapshot = {
            k: v for k, (v, _) in self._current.items() if k.startswith("sys.contract.")
        }

        self._overlay = {}
        self._overlay_log = []
        self._block_policy_snapshot = policy_snapshot
        receipts = []
        out_events: list[EventDraft] = []
        try:
            for idx, txn in enumerate(txns):
                receipt, events = self._execute(txn, height, idx, active_snapshot)
                receipts.append(receipt)
                out_events.extend(events)
            merged = {
                **{k.encode("utf-8"): v for k, (v, _) in self._current.items()},
                **{k.encode("utf-8"): v for k, (v, _) in self._overlay.items()},
            }
            state_root = MerkleMap(merged).root
            header = BlockHeader(
                chain_id=self.chain_id,
                height=height,
                prev_digest=self.blocks[-1].header.digest,
                txn_root=root_of_digests([t.txn_id for t in txns]),
                state_root=state_root,
                tick=tick,
            )
            cert = self._certify(header)
        except QuorumFailure:
            self.mempool = list(txns) + self.mempool
            self._overlay = None
            self._overlay_log = []
            raise
        finally:
            self._block_policy_snapshot = None

        # commit: fold overlay into history and current state
        for version, key, value in self._overlay_log:
            self._history.setdefault(key, []).append((version, value))
            self._version_log.append((version, key, value))
            self._current[key] = (value, version)
        self._overlay = None
        self._overlay_log = []

        block = Block(
            header=header, txns=txns, receipts=tuple(receipts), cert=cert
        )
        self.blocks.append(block)
        if self.observer is not None:
            self.observer.on_block(self, block)
        return block, out_events

    def _commit_writes(
        self, writes: dict[str, Value], height: int, idx: int
    ) -> tuple[tuple[str, Value], ...]:
        version = (height, idx)
        items = tuple(writes.items())
        for key, value in items:
            self._overlay[key] = (value, version)
            self._overlay_log.append((version, key, value))
        return items

    def _execute(
        self, txn: Transaction, height: int, idx: int, active_snapshot: dict
    ) -> tuple[Receipt, list[EventDraft]]:
        target = txn.target_contract
        try:
            if target.startswith("sys."):
                handler = self.system_handlers.get(target)
                if target == "sys.registry" and txn.method == "register":
                    writes = {f"sys.contract.{txn.args[0]}": True}
                    applied = self._commit_writes(writes, height, idx)
                    return Receipt(txn.txn_id, "ok", writes=applied), []
                if target == "sys.policy" and txn.method == "attach":
                    cid, src = txn.args[0], txn.args[1]
                    applied = self._commit_writes({f"sys.policy.{cid}": src}, height, idx)
                    self._policy_cache.pop(cid, None)
                    return Receipt(txn.txn_id, "ok", writes=applied), []
                if handler is None:
                    raise UnknownContract(target)
                return handler(self, txn, height, idx)

            contract = self.contracts.get(target)
            if contract is None or not self.contract_active(target, active_snapshot):
                raise UnknownContract(f"{target} not active")
            ctx = ExecContext(self, target, txn, height)
            if txn.method == "__event__":
                from .bus import Event  # local import to avoid a cycle

                event = Event.decode(txn.args[0])
                contract.on_event(ctx, event)
            else:
                handler = contract.handlers.get(txn.method)
                if handler is None:
                    raise UnknownContract(f"{target}.{txn.method}")
                handler(contract, ctx, list(txn.args))
            # foreign locks block local writes (serializability under Locks mode)
            for key in ctx.writes:
                if self.locks.conflicts(key, txn.txn_id.hex()):
                    raise LockConflict(key)
            applied = self._commit_writes(ctx.writes, height, idx)
            return Receipt(txn.txn_id, "ok", writes=applied), ctx.events
        except Exception as exc:  # failed txns are recorded, never dropped
            return (
                Receipt(
                    txn.txn_id,
                    "failed",
                    error=f"{type(exc).__name__}: {exc}",
                ),
                [],
            )

    # ------------------------------------------------------------- policies

    def attach_policy(self, contract_id: str, src: str) -> bytes:
        """Validate and stage a policy; applied from the next block onward.

        Unparseable text raises ParseError and leaves the ledger untouched.
        """
        from .policy import parse_policy

        parse_policy(src)  # ParseError propagates before anything is queued
        return self.submit_sys_txn("sys.policy", "attach", [contract_id, src])

    def policy_source(self, contract_id: str) -> Optional[str]:
        snap = getattr(self, "_block_policy_snapshot", None)
        if snap is not None:
            return snap.get(f"sys.policy.{contract_id}")
        entry = self._current.get(f"sys.policy.{contract_id}")
        return entry[0] if entry else None

    def evaluate_policy(
        self,
        contract_id: str,
        action: str,
        resource: str,
        caller_id: str,
        caller_chain: str,
        height: Optional[int] = None,
    ):
        """Evaluate the attached policy; no policy attached means ungated."""
        from .policy import AccessRequest, ChainEvalContext, Decision, evaluate, parse_policy

        src = self.policy_source(contract_id)
        if src is None:
            return Decision(True, "")
        cached = self._policy_cache.get(contract_id)
        if cached is None or cached[0] != src:
            cached = (src, parse_policy(src))
            self._policy_cache[contract_id] = cached
        ast = cached[1]
        if height is None:
            height = self.height
        req = AccessRequest(
            caller_id=caller_id,
            caller_chain=caller_chain,
            action=action,
            resource=resource,
            height=height,
        )
        ctx = ChainEvalContext(self, contract_id, height)
        return evaluate(ast, req, ctx)

    # ---------------------------------------------------------- query path

    def run_query(self, contract_id: str, method: str, args: list[Value]) -> Value:
        contract = self.contracts.get(contract_id)
        if contract is None or not self.contract_active(contract_id):
            raise UnknownContract(contract_id)
        handler = contract.query_handlers.get(method)
        if handler is None:
            raise UnknownContract(f"{contract_id}.{method} (query)")
        view = StateView(self, contract_id)
        return handler(contract, view, list(args))

    # --------------------------------------------------------- block store

    def export_block_log(self, path: str) -> None:
        with open(path, "w", encoding="ascii") as fh:
            for block in self.blocks:
                fh.write(base64.b64encode(encode_block(block)).decode("ascii"))
                fh.write("\n")


def encode_block(block: Block) -> bytes:
    parts = [block.header.encode()]
    parts.append(len(block.txns).to_bytes(4, "big"))
    for txn in block.txns:
        raw = txn.encode()
        parts.append(len(raw).to_bytes(4, "big") + raw)
    parts.append(len(block.receipts).to_bytes(4, "big"))
    for r in block.receipts:
        enc_writes = b"".join(
            lps(k) + encode_value(v) for k, v in r.writes
        )
        parts.append(
            r.txn_id
            + (b"\x01" if r.status == "ok" else b"\x00")
            + lps(r.error)
            + lps(r.xchain_txn)
            + len(r.writes).to_bytes(4, "big")
            + enc_writes
        )
    parts.append(len(block.cert.signatures).to_bytes(2, "big"))
    for node_id, sig in block.cert.signatures:
        parts.append(lps(node_id) + len(sig).to_bytes(4, "big") + sig)
    return b"".join(parts)


def decode_block(data: bytes) -> Block:
    offset = 0
    chain_id, offset = read_lps(data, offset)
    height = int.from_bytes(data[offset : offset + 8], "big")
    offset += 8
    prev_digest = data[offset : offset + 32]
    offset += 32
    txn_root = data[offset : offset + 32]
    offset += 32
    state_root = data[offset : offset + 32]
    offset += 32
    tick = int.from_bytes(data[offset : offset + 8], "big")
    offset += 8
    header = BlockHeader(chain_id, height, prev_digest, txn_root, state_root, tick)

    n_txns = int.from_bytes(data[offset : offset + 4], "big")
    offset += 4
    txns = []
    for _ in range(n_txns):
        ln = int.from_bytes(data[offset : offset + 4], "big")
        offset += 4
        raw = data[offset : offset + ln]
        offset += ln
        txns.append(decode_transaction(raw))

    n_receipts = int.from_bytes(data[offset : offset + 4], "big")
    offset += 4
    receipts = []
    for _ in range(n_receipts):
        txn_id = data[offset : offset + 32]
        offset += 32
        status = "ok" if data[offset] else "failed"
        offset += 1
        error, offset = read_lps(data, offset)
        xchain, offset = read_lps(data, offset)
        n_writes = int.from_bytes(data[offset : offset + 4], "big")
        offset += 4
        writes = []
        for _ in range(n_writes):
            key, offset = read_lps(data, offset)
            value, offset = decode_value(data, offset)
            writes.append((key, value))
        receipts.append(Receipt(txn_id, status, error, tuple(writes), xchain))

    n_sigs = int.from_bytes(data[offset : offset + 2], "big")
    offset += 2
    sigs = []
    for _ in range(n_sigs):
        node_id, offset = read_lps(data, offset)
        ln = int.from_bytes(data[offset : offset + 4], "big")
        offset += 4
        sigs.append((node_id, data[offset : offset + ln]))
        offset += ln
    if offset != len(data):
        raise EncodingError("trailing bytes in block")
    cert = QuorumCert(header_digest=header.digest, signatures=tuple(sigs))
    return Block(header=header, txns=tuple(txns), receipts=tuple(receipts), cert=cert)


def decode_transaction(raw: bytes) -> Transaction:
    offset = 0
    caller_chain, offset = read_lps(raw, offset)
    caller_id, offset = read_lps(raw, offset)
    target, offset = read_lps(raw, offset)
    method, offset = read_lps(raw, offset)
    args, offset = decode_values(raw, offset)
    nonce = int.from_bytes(raw[offset : offset + 8], "big")
    return Transaction(caller_chain, caller_id, target, method, tuple(args), nonce)


def read_block_log(path: str) -> list[Block]:
    blocks = []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if line:
                blocks.append(decode_block(base64.b64decode(line)))
    return blocks
