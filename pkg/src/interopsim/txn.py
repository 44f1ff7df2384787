"""Cross-chain transactions: verified reads, mini-transactions, general 2PC.

Reads travel a direct request/response channel and come back either
contract-path (every honest node signs digest(value || nonce || height),
f+1 matching signatures required) or storage-path (one node signature plus
a Merkle proof anchored to a certified state root).

Mini-transactions (known compare/read/write sets) and general transactions
(lock-based or optimistic) commit through two-phase commit run on a
coordinator chain: prepare and decision records are ledger entries there,
protocol messages are bus events, votes carry f+1 participant-node
signatures by construction of the gateway path.  Prepared participants
that miss the decision recover it by polling the coordinator's ledger.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .bus import (
    Event,
    KIND_GT_DECIDE,
    KIND_GT_PREPARE,
    KIND_GT_VOTE,
    KIND_MT_DECIDE,
    KIND_MT_PREPARE,
    KIND_MT_VOTE,
    KIND_READ_REQ,
    KIND_READ_RESP,
)
from .chain import Behavior, Chain, EventDraft, Receipt, Version
from .errors import (
    EncodingError,
    InvalidState,
    LockTimeout,
    PolicyDenied,
    ProofInvalid,
    StaleQuorum,
)
from .merkle import MerkleProof, decode_proof, encode_proof, verify_proof
from .policy import AggExpr, ChainEvalContext, eval_aggregate
from .sim import Future, Simulation
from .values import Value, decode_values, digest, encode_value, encode_values

MODE_LOCKS = "locks"
MODE_OCC = "occ"

ST_ACTIVE = "active"
ST_PREPARED = "prepared"
ST_COMMITTED = "committed"
ST_ABORTED = "aborted"


@dataclass(frozen=True)
class ReadRequest:
    nonce: int
    target_chain: str
    contract: str
    method: str = ""  # "" selects the storage path (plain key)
    key: str = ""
    args: tuple[Value, ...] = ()
    caller_id: str = "client"
    caller_chain: str = ""
    lock_for: str = ""  # general-txn id that wants the key locked first
    lock_only: bool = False


@dataclass(frozen=True)
class ReadResponse:
    value: Value
    anchor_height: int
    nonce: int
    signatures: tuple[tuple[str, bytes], ...]
    proof: Optional[MerkleProof] = None
    version: Optional[Version] = None
    status: str = "ok"  # ok | denied | locked | error
    reason: str = ""

    @property
    def digest(self) -> bytes:
        return read_response_digest(self.value, self.nonce, self.anchor_height)


def read_response_digest(value: Value, nonce: int, anchor_height: int) -> bytes:
    return digest(
        encode_value(value) + nonce.to_bytes(8, "big") + anchor_height.to_bytes(8, "big")
    )


@dataclass(frozen=True)
class MiniTxn:
    compares: tuple[tuple[str, str, Value], ...]  # (chain, key, expected)
    reads: tuple[tuple[str, str], ...]  # (chain, key)
    writes: tuple[tuple[str, str, Value], ...]  # (chain, key, value)

    def chains(self) -> list[str]:
        seen: list[str] = []
        for chain, *_ in [*self.compares, *self.reads, *self.writes]:
            if chain not in seen:
                seen.append(chain)
        return seen


@dataclass
class TwoPCRecord:
    txn_id: str
    phase: str  # prepare | commit | abort
    votes: dict[str, tuple[str, str]] = field(default_factory=dict)  # chain -> (vote, reason)


@dataclass(frozen=True)
class Committed:
    read_values: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Aborted:
    reason: str


class GeneralTxn:
    """Handle for an interactive cross-chain transaction."""

    def __init__(self, engine: "XTxnEngine", txn_id: str, coordinator: str, mode: str):
        self.engine = engine
        self.txn_id = txn_id
        self.coordinator_chain = coordinator
        self.mode = mode
        self.status = ST_ACTIVE
        self.read_set: list[tuple[str, str, Version]] = []
        self.prefix_set: list[tuple[str, str, Version]] = []
        self.write_set: dict[tuple[str, str], Value] = {}
        self.lock_keys: dict[str, list[str]] = {}  # chain -> held lock keys
        self.caller_id = "client"
        self.caller_chain = coordinator

    # sync конvenience wrappers live on the engine; handle keeps state only

    def touched_chains(self) -> list[str]:
        seen: list[str] = []
        for chain, _, _ in [*self.read_set, *self.prefix_set]:
            if chain not in seen:
                seen.append(chain)
        for chain, _ in self.write_set:
            if chain not in seen:
                seen.append(chain)
        for chain in self.lock_keys:
            if chain not in seen:
                seen.append(chain)
        return seen


# ---------------------------------------------------------------- payloads


def _enc_read_req(req: ReadRequest) -> bytes:
    vals: list[Value] = [
        req.nonce,
        req.target_chain,
        req.contract,
        req.method,
        req.key,
        req.caller_id,
        req.caller_chain,
        req.lock_for,
        req.lock_only,
        len(req.args),
        *req.args,
    ]
    return bytes([KIND_READ_REQ]) + encode_values(vals)


def _dec_read_req(raw: bytes) -> ReadRequest:
    if not raw or raw[0] != KIND_READ_REQ:
        raise EncodingError("not a read request")
    vals, _ = decode_values(raw, 1)
    n_args = vals[9]
    return ReadRequest(
        nonce=vals[0],
        target_chain=vals[1],
        contract=vals[2],
        method=vals[3],
        key=vals[4],
        caller_id=vals[5],
        caller_chain=vals[6],
        lock_for=vals[7],
        lock_only=vals[8],
        args=tuple(vals[10 : 10 + n_args]),
    )


def _enc_read_resp(resp: ReadResponse) -> bytes:
    vals: list[Value] = [
        resp.status,
        resp.reason,
        resp.value,
        resp.anchor_height,
        resp.nonce,
        resp.version[0] if resp.version else -1,
        resp.version[1] if resp.version else -1,
        len(resp.signatures),
    ]
    for node_id, sig in resp.signatures:
        vals.append(node_id)
        vals.append(sig)
    vals.append(encode_proof(resp.proof) if resp.proof is not None else b"")
    return bytes([KIND_READ_RESP]) + encode_values(vals)


def _dec_read_resp(raw: bytes) -> ReadResponse:
    if not raw or raw[0] != KIND_READ_RESP:
        raise EncodingError("not a read response")
    vals, _ = decode_values(raw, 1)
    n_sigs = vals[7]
    sigs = []
    for i in range(n_sigs):
        sigs.append((vals[8 + 2 * i], vals[9 + 2 * i]))
    proof_raw = vals[8 + 2 * n_sigs]
    proof = decode_proof(proof_raw)[0] if proof_raw else None
    version = None
    if vals[5] >= 0:
        version = (vals[5], vals[6])
    return ReadResponse(
        value=vals[2],
        anchor_height=vals[3],
        nonce=vals[4],
        signatures=tuple(sigs),
        proof=proof,
        version=version,
        status=vals[0],
        reason=vals[1],
    )


def _enc_rows(rows: list[tuple[str, Value, Version]]) -> bytes:
    vals: list[Value] = [len(rows)]
    for key, value, version in rows:
        vals.extend([key, value, version[0], version[1]])
    return encode_values(vals)


def _dec_rows(raw: bytes) -> list[tuple[str, Value, Version]]:
    vals, _ = decode_values(raw, 0)
    rows = []
    for i in range(vals[0]):
        base = 1 + 4 * i
        rows.append((vals[base], vals[base + 1], (vals[base + 2], vals[base + 3])))
    return rows


# ------------------------------------------------------------- the engine


class XTxnEngine:
    """Protocol driver: registered on a Simulation, serves every chain."""

    def __init__(self, sim: Simulation):
        self.sim = sim
        self._nonce = 0
        self._txn_seq = 0
        # per-txn protocol bookkeeping (mirrors coordinator ledger records)
        self.records: dict[str, dict] = {}
        # participant-side pending writes: (txid, chain) -> [(key, value)]
        self._pending: dict[tuple[str, str], list[tuple[str, Value]]] = {}
        self._polling: set[tuple[str, str]] = set()
        for chain_id in sim.chain_order:
            self.attach_chain(chain_id)

    def attach_chain(self, chain_id: str) -> None:
        chain = self.sim.chains[chain_id]
        chain.system_handlers["sys.txn"] = self._sys_txn_exec
        self.sim.direct_handlers[chain_id] = self._serve_direct

    # ------------------------------------------------------------- reads

    def next_nonce(self) -> int:
        self._nonce += 1
        return self._nonce

    def make_read_request(
        self,
        target_chain: str,
        contract: str = "",
        method: str = "",
        key: str = "",
        args: tuple = (),
        caller_id: str = "client",
        caller_chain: str = "",
        lock_for: str = "",
        lock_only: bool = False,
    ) -> ReadRequest:
        return ReadRequest(
            nonce=self.next_nonce(),
            target_chain=target_chain,
            contract=contract,
            method=method,
            key=key,
            args=args,
            caller_id=caller_id,
            caller_chain=caller_chain,
            lock_for=lock_for,
            lock_only=lock_only,
        )

    def read_async(self, req: ReadRequest, recovery: bool = False) -> Future:
        """Send the request; future resolves to a verified ReadResponse."""
        out = Future()
        raw_fut = self.sim.direct_request(
            req.target_chain, _enc_read_req(req), recovery=recovery
        )
        self.sim.spawn(self._read_verify_task(req, raw_fut, out))
        return out

    def _read_verify_task(self, req: ReadRequest, raw_fut: Future, out: Future):
        raw = yield raw_fut
        try:
            out.set_result(self.verify_response(req, raw))
        except Exception as exc:
            out.set_error(exc)
        return None

    def verify_response(self, req: ReadRequest, raw: Optional[bytes]) -> ReadResponse:
        if raw is None:
            raise StaleQuorum("no response within retry budget")
        resp = _dec_read_resp(raw)
        if resp.status == "denied":
            raise PolicyDenied(resp.reason)
        if resp.status == "locked":
            return resp  # caller retries; carries no accepted value
        if resp.status != "ok":
            raise StaleQuorum(resp.reason or "malformed response")
        if resp.nonce != req.nonce:
            raise StaleQuorum("nonce mismatch (replayed response)")
        registry = self.sim.registry
        f = registry.f_of(req.target_chain)
        expected = read_response_digest(resp.value, req.nonce, resp.anchor_height)
        valid = registry.count_valid(req.target_chain, expected, resp.signatures)
        if resp.proof is not None:
            # storage path: certified root + proof + at least one fresh signature
            if valid < 1:
                raise StaleQuorum("storage-path response lacks a valid signature")
            chain = self.sim.chains[req.target_chain]
            root = chain.state_root_at(resp.anchor_height)
            cert = chain.cert_at(resp.anchor_height)
            header_digest = chain.header_at(resp.anchor_height).digest
            if registry.count_valid(req.target_chain, header_digest, cert.signatures) < 2 * f + 1:
                raise ProofInvalid("anchor block certificate invalid")
            if resp.proof.root_height != resp.anchor_height:
                raise ProofInvalid("proof anchored to a different height")
            if not verify_proof(root, resp.proof):
                raise ProofInvalid("merkle proof does not verify")
            full_key = f"{req.contract}.{req.key}" if req.contract else req.key
            if resp.proof.leaf_key != full_key.encode("utf-8"):
                raise ProofInvalid("proof is for a different key")
            if resp.proof.kind == "membership" and resp.proof.leaf_value != resp.value:
                raise ProofInvalid("proof value mismatch")
            if resp.proof.kind == "absence" and resp.value is not None:
                raise ProofInvalid("absence proof with non-null value")
        elif valid < f + 1:
            raise StaleQuorum(f"{valid} matching signatures < f+1 = {f + 1}")
        return resp

    def verified_read(self, req: ReadRequest) -> ReadResponse:
        """Synchronous facade: pumps the simulation until the read resolves."""
        return self.sim.pump(self.read_async(req))

    # --- participant-side serving (direct channel handler) ---

    def _serve_direct(self, raw: bytes, now: int) -> Optional[bytes]:
        try:
            req = _dec_read_req(raw)
        except EncodingError:
            return None
        chain = self.sim.chains.get(req.target_chain)
        if chain is None:
            return None
        return self._serve_read(chain, req)

    def _owning_contract(self, chain: Chain, key: str) -> str:
        head = key.split(".", 1)[0]
        return head if head in chain.contracts else ""

    def _check_read_policy(self, chain: Chain, req: ReadRequest, resource: str, contract: str):
        if not contract:
            return None
        decision = chain.evaluate_policy(
            contract, "read", resource, req.caller_id, req.caller_chain
        )
        if not decision.allowed:
            return _enc_read_resp(
                ReadResponse(
                    value=None,
                    anchor_height=chain.height,
                    nonce=req.nonce,
                    signatures=(),
                    status="denied",
                    reason=decision.reason,
                )
            )
        return None

    def _sign_matching(
        self, chain: Chain, value: Value, nonce: int, height: int
    ) -> tuple[tuple[str, bytes], ...]:
        """Every node signs per its behavior; equivocators corrupt the digest."""
        good = read_response_digest(value, nonce, height)
        sigs = []
        for node_id in chain.cfg.node_ids():
            behavior = chain.byzantine.get(node_id, Behavior.HONEST)
            if behavior == Behavior.SILENT:
                continue
            target = good
            if behavior == Behavior.EQUIVOCATE:
                target = bytes(b ^ 0xFF for b in good)
            sigs.append((node_id, chain.scheme.sign(chain.keys[node_id].signing_key, target)))
        return tuple(sigs)

    def _serve_read(self, chain: Chain, req: ReadRequest) -> Optional[bytes]:
        height = chain.height

        # lock release for an aborted transaction (idempotent)
        if req.method == "__unlock__":
            if chain.locks.release_owner(req.lock_for):
                self._log_lock(chain.chain_id, "release", "*", req.lock_for)
            return _enc_read_resp(
                ReadResponse(
                    value=True, anchor_height=height, nonce=req.nonce, signatures=()
                )
            )

        # aggregate query: resource agg.<fn>.<prefix>, no row access implied
        if req.method == "__agg__":
            fn = req.args[0]
            prefix = req.args[1]
            frm = req.args[2] if len(req.args) > 2 else None
            to = req.args[3] if len(req.args) > 3 else None
            resource = f"agg.{fn}.{prefix.rstrip('.')}" if prefix else f"agg.{fn}"
            denied = self._check_read_policy(chain, req, resource, req.contract)
            if denied is not None:
                return denied
            try:
                value = eval_aggregate(
                    AggExpr(fn, prefix, frm, to),
                    ChainEvalContext(chain, req.contract, height),
                )
            except Exception as exc:
                return _enc_read_resp(
                    ReadResponse(
                        value=None,
                        anchor_height=height,
                        nonce=req.nonce,
                        signatures=(),
                        status="error",
                        reason=f"{type(exc).__name__}: {exc}",
                    )
                )
            sigs = self._sign_matching(chain, value, req.nonce, height)
            return _enc_read_resp(
                ReadResponse(value=value, anchor_height=height, nonce=req.nonce, signatures=sigs)
            )

        # prefix snapshot: phantom-safe row listing with a prefix version guard
        if req.method == "__prefix__":
            prefix = req.key
            contract = req.contract or self._owning_contract(chain, prefix)
            rel = prefix[len(contract) + 1 :] if contract and prefix.startswith(contract + ".") else prefix
            full_prefix = prefix if not req.contract else f"{req.contract}.{prefix}"
            rows = [
                (key, value, version)
                for key, value, version in chain.state_items(full_prefix)
                if value is not None
            ]
            if contract:
                for key, _, _ in rows:
                    row_rel = key[len(contract) + 1 :]
                    denied = self._check_read_policy(chain, req, row_rel, contract)
                    if denied is not None:
                        return denied
            if req.lock_for:
                if not chain.locks.try_lock_prefix(full_prefix, req.lock_for):
                    return _enc_read_resp(
                        ReadResponse(
                            value=None,
                            anchor_height=height,
                            nonce=req.nonce,
                            signatures=(),
                            status="locked",
                            reason=full_prefix,
                        )
                    )
                self._log_lock(chain.chain_id, "acquire", full_prefix, req.lock_for)
            guard = chain.latest_version_under(full_prefix)
            value = _enc_rows(rows)
            sigs = self._sign_matching(chain, value, req.nonce, height)
            return _enc_read_resp(
                ReadResponse(
                    value=value,
                    anchor_height=height,
                    nonce=req.nonce,
                    signatures=sigs,
                    version=guard,
                )
            )

        # contract path: a read-only query handler executed by every node
        if req.method:
            denied = self._check_read_policy(chain, req, req.method, req.contract)
            if denied is not None:
                return denied
            try:
                value = chain.run_query(req.contract, req.method, list(req.args))
            except Exception as exc:
                return _enc_read_resp(
                    ReadResponse(
                        value=None,
                        anchor_height=height,
                        nonce=req.nonce,
                        signatures=(),
                        status="error",
                        reason=f"{type(exc).__name__}: {exc}",
                    )
                )
            sigs = self._sign_matching(chain, value, req.nonce, height)
            return _enc_read_resp(
                ReadResponse(value=value, anchor_height=height, nonce=req.nonce, signatures=sigs)
            )

        # storage path: plain key, merkle proof, single (first honest) node
        full_key = f"{req.contract}.{req.key}" if req.contract else req.key
        contract = req.contract or self._owning_contract(chain, full_key)
        if contract and not full_key.startswith("sys."):
            rel = full_key[len(contract) + 1 :]
            if req.lock_only:
                # write-lock acquisition: gate on write intent, not read
                denial = self._check_write_policy(
                    chain, full_key, req.caller_id, req.caller_chain, chain.height
                )
                if denial is not None:
                    return _enc_read_resp(
                        ReadResponse(
                            value=None,
                            anchor_height=height,
                            nonce=req.nonce,
                            signatures=(),
                            status="denied",
                            reason=denial,
                        )
                    )
            else:
                denied = self._check_read_policy(chain, req, rel, contract)
                if denied is not None:
                    return denied
        if req.lock_for:
            if not chain.locks.try_lock(full_key, req.lock_for):
                return _enc_read_resp(
                    ReadResponse(
                        value=None,
                        anchor_height=height,
                        nonce=req.nonce,
                        signatures=(),
                        status="locked",
                        reason=full_key,
                    )
                )
            self._log_lock(chain.chain_id, "acquire", full_key, req.lock_for)
        value = chain.read_state(full_key, height)
        version = chain.current_version(full_key)
        proof = chain.get_proof(full_key, height)
        signer = None
        for node_id in chain.cfg.node_ids():
            if chain.byzantine.get(node_id, Behavior.HONEST) == Behavior.HONEST:
                signer = node_id
                break
        sigs = ()
        if signer is not None:
            sigs = (
                (
                    signer,
                    chain.scheme.sign(
                        chain.keys[signer].signing_key,
                        read_response_digest(value, req.nonce, height),
                    ),
                ),
            )
        return _enc_read_resp(
            ReadResponse(
                value=value,
                anchor_height=height,
                nonce=req.nonce,
                signatures=sigs,
                proof=proof,
                version=version,
            )
        )

    # ------------------------------------------------------ mini-txns

    def new_txn_id(self, prefix: str) -> str:
        self._txn_seq += 1
        return digest(f"{prefix}|{self._txn_seq}".encode()).hex()[:16]

    def execute_minitxn_async(
        self, coordinator: str, mt: MiniTxn, caller_id: str = "client"
    ) -> Future:
        txid = self.new_txn_id(f"mt|{coordinator}")
        participants = mt.chains()
        fut = Future()
        self.records[txid] = {
            "type": "mini",
            "coordinator": coordinator,
            "participants": participants,
            "mt": mt,
            "votes": {},
            "decision": None,
            "reason": "",
            "applied": set(),
            "future": fut,
            "caller_id": caller_id,
            "read_values": {},
            "rt_prepare_done": False,
            "rt_decide_done": False,
        }
        if not participants:
            self.records[txid]["decision"] = "commit"
            fut.set_result(Committed())
            return fut
        coord = self.sim.chains[coordinator]
        coord.submit_sys_txn("sys.txn", "mt_begin", [txid], caller_id="sys.txn")
        self._arm_vote_timeout(txid)
        return fut

    def execute_minitxn(self, coordinator: str, mt: MiniTxn, caller_id: str = "client"):
        result = self.sim.pump(self.execute_minitxn_async(coordinator, mt, caller_id))
        return result

    def _arm_vote_timeout(self, txid: str) -> None:
        deadline = self.sim.tick + self.sim.config.vote_timeout

        def on_timeout():
            rec = self.records.get(txid)
            if rec is None or rec["decision"] is not None:
                return
            coord = self.sim.chains[rec["coordinator"]]
            coord.submit_sys_txn("sys.txn", "decide_timeout", [txid], caller_id="sys.txn")

        self.sim.call_at(deadline, on_timeout)

    # ---------------------------------------------------- general txns

    def begin_general(self, coordinator: str, mode: str, caller_id: str = "client") -> GeneralTxn:
        if mode not in (MODE_LOCKS, MODE_OCC):
            raise InvalidState(f"unknown mode {mode}")
        txid = self.new_txn_id(f"gt|{coordinator}")
        t = GeneralTxn(self, txid, coordinator, mode)
        t.caller_id = caller_id
        self.records[txid] = {
            "type": "general",
            "coordinator": coordinator,
            "participants": [],
            "handle": t,
            "votes": {},
            "decision": None,
            "reason": "",
            "applied": set(),
            "future": None,
            "caller_id": caller_id,
            "read_values": {},
            "rt_prepare_done": False,
            "rt_decide_done": False,
        }
        return t

    def _require_active(self, t: GeneralTxn) -> None:
        if t.status != ST_ACTIVE:
            raise InvalidState(f"transaction is {t.status}")

    def txn_read_async(self, t: GeneralTxn, chain_id: str, key: str) -> Future:
        self._require_active(t)
        if (chain_id, key) in t.write_set:
            fut = Future()
            fut.set_result(t.write_set[(chain_id, key)])
            return fut  # read-your-writes
        task = self.sim.spawn(self._txn_read_task(t, chain_id, key))
        return task.future

    def _txn_read_task(self, t: GeneralTxn, chain_id: str, key: str):
        deadline = self.sim.tick + self.sim.config.lock_timeout
        lock_for = t.txn_id if t.mode == MODE_LOCKS else ""
        while True:
            req = self.make_read_request(
                chain_id,
                key=key,
                caller_id=t.caller_id,
                caller_chain=t.caller_chain,
                lock_for=lock_for,
            )
            raw = yield self.sim.direct_request(chain_id, _enc_read_req(req))
            resp = self.verify_response(req, raw)
            if resp.status == "locked":
                if self.sim.tick >= deadline:
                    self.abort(t, "LockTimeout")
                    raise LockTimeout(f"{chain_id}:{key}")
                yield self.sim.sleep(2)
                continue
            if t.status != ST_ACTIVE:
                raise InvalidState(f"transaction is {t.status}")
            if lock_for:
                t.lock_keys.setdefault(chain_id, []).append(key)
            version = resp.version or (0, 0)
            t.read_set.append((chain_id, key, version))
            if chain_id != t.coordinator_chain:
                self.sim.meter.round_trip(t.txn_id)
            return resp.value

    def txn_read(self, t: GeneralTxn, chain_id: str, key: str) -> Value:
        return self.sim.pump(self.txn_read_async(t, chain_id, key))

    def txn_read_prefix_async(self, t: GeneralTxn, chain_id: str, prefix: str) -> Future:
        self._require_active(t)
        task = self.sim.spawn(self._txn_read_prefix_task(t, chain_id, prefix))
        return task.future

    def _txn_read_prefix_task(self, t: GeneralTxn, chain_id: str, prefix: str):
        deadline = self.sim.tick + self.sim.config.lock_timeout
        lock_for = t.txn_id if t.mode == MODE_LOCKS else ""
        while True:
            req = self.make_read_request(
                chain_id,
                method="__prefix__",
                key=prefix,
                caller_id=t.caller_id,
                caller_chain=t.caller_chain,
                lock_for=lock_for,
            )
            raw = yield self.sim.direct_request(chain_id, _enc_read_req(req))
            resp = self.verify_response(req, raw)
            if resp.status == "locked":
                if self.sim.tick >= deadline:
                    self.abort(t, "LockTimeout")
                    raise LockTimeout(f"{chain_id}:{prefix}*")
                yield self.sim.sleep(2)
                continue
            if t.status != ST_ACTIVE:
                raise InvalidState(f"transaction is {t.status}")
            if lock_for:
                t.lock_keys.setdefault(chain_id, []).append(prefix + "*")
            t.prefix_set.append((chain_id, prefix, resp.version or (0, 0)))
            if chain_id != t.coordinator_chain:
                self.sim.meter.round_trip(t.txn_id)
            return _dec_rows(resp.value)

    def txn_read_prefix(self, t: GeneralTxn, chain_id: str, prefix: str):
        return self.sim.pump(self.txn_read_prefix_async(t, chain_id, prefix))

    def txn_write_async(self, t: GeneralTxn, chain_id: str, key: str, value: Value) -> Future:
        self._require_active(t)
        if t.mode == MODE_LOCKS and not self._holds_lock(t, chain_id, key):
            task = self.sim.spawn(self._txn_lock_write_task(t, chain_id, key, value))
            return task.future
        t.write_set[(chain_id, key)] = value
        fut = Future()
        fut.set_result(None)
        return fut

    def _holds_lock(self, t: GeneralTxn, chain_id: str, key: str) -> bool:
        for held in t.lock_keys.get(chain_id, []):
            if held == key or (held.endswith("*") and key.startswith(held[:-1])):
                return True
        return False

    def _txn_lock_write_task(self, t: GeneralTxn, chain_id: str, key: str, value: Value):
        deadline = self.sim.tick + self.sim.config.lock_timeout
        while True:
            req = self.make_read_request(
                chain_id,
                key=key,
                caller_id=t.caller_id,
                caller_chain=t.caller_chain,
                lock_for=t.txn_id,
                lock_only=True,
            )
            raw = yield self.sim.direct_request(chain_id, _enc_read_req(req))
            resp = self.verify_response(req, raw)
            if resp.status == "locked":
                if self.sim.tick >= deadline:
                    self.abort(t, "LockTimeout")
                    raise LockTimeout(f"{chain_id}:{key}")
                yield self.sim.sleep(2)
                continue
            if t.status != ST_ACTIVE:
                raise InvalidState(f"transaction is {t.status}")
            t.lock_keys.setdefault(chain_id, []).append(key)
            t.write_set[(chain_id, key)] = value
            return None

    def txn_write(self, t: GeneralTxn, chain_id: str, key: str, value: Value) -> None:
        self.sim.pump(self.txn_write_async(t, chain_id, key, value))

    def txn_commit_async(self, t: GeneralTxn) -> Future:
        self._require_active(t)
        t.status = ST_PREPARED
        rec = self.records[t.txn_id]
        fut = Future()
        rec["future"] = fut
        participants = t.touched_chains()
        rec["participants"] = participants
        if not participants:
            rec["decision"] = "commit"
            t.status = ST_COMMITTED
            fut.set_result(Committed())
            return fut
        coord = self.sim.chains[t.coordinator_chain]
        coord.submit_sys_txn("sys.txn", "gt_begin", [t.txn_id], caller_id="sys.txn")
        self._arm_vote_timeout(t.txn_id)
        return fut

    def txn_commit(self, t: GeneralTxn):
        return self.sim.pump(self.txn_commit_async(t))

    def abort(self, t: GeneralTxn, reason: str = "client abort") -> None:
        if t.status in (ST_COMMITTED, ST_ABORTED):
            return
        t.status = ST_ABORTED
        rec = self.records[t.txn_id]
        rec["decision"] = "abort"
        rec["reason"] = reason
        self.sim.meter.abort(reason)
        # locks release via unlock messages: the release itself rides the
        # lossy channel and is retried, like any other protocol step
        for chain_id in t.touched_chains():
            req = self.make_read_request(
                chain_id,
                method="__unlock__",
                caller_id="sys.txn",
                caller_chain=t.coordinator_chain,
                lock_for=t.txn_id,
            )
            self.sim.direct_request(chain_id, _enc_read_req(req))
        self._log_xtxn(t.txn_id)
        if rec["future"] is not None:
            rec["future"].set_result(Aborted(reason))

    # ------------------------------------------------- block-exec handler

    def _sys_txn_exec(self, chain: Chain, txn, height: int, idx: int):
        """System handler: runs inside block execution, deterministically."""
        method = txn.method
        if method == "__event__":
            event = Event.decode(txn.args[0])
            return self._handle_event(chain, event, txn, height, idx)
        if method == "mt_begin":
            return self._exec_mt_begin(chain, txn, height, idx)
        if method == "gt_begin":
            return self._exec_gt_begin(chain, txn, height, idx)
        if method == "decide_timeout":
            return self._exec_decide(chain, txn.args[0], "abort", "VoteTimeout", txn, height, idx)
        if method == "gt_apply":
            return self._exec_apply(chain, txn.args[0], txn.args[1], txn, height, idx)
        raise EncodingError(f"unknown sys.txn method {method}")

    # --- coordinator side ---

    def _exec_mt_begin(self, chain: Chain, txn, height: int, idx: int):
        txid = txn.args[0]
        rec = self.records[txid]
        mt: MiniTxn = rec["mt"]
        writes = {
            f"sys.2pc.{txid}.phase": "prepare",
            f"sys.2pc.{txid}.participants": ",".join(rec["participants"]),
        }
        applied = chain._commit_writes(writes, height, idx)
        events = []
        for part in rec["participants"]:
            compares = [(k, v) for c, k, v in mt.compares if c == part]
            reads = [k for c, k in mt.reads if c == part]
            wr = [(k, v) for c, k, v in mt.writes if c == part]
            vals: list[Value] = [txid, rec["caller_id"], chain.chain_id, len(compares)]
            for k, v in compares:
                vals.extend([k, v])
            vals.append(len(reads))
            vals.extend(reads)
            vals.append(len(wr))
            for k, v in wr:
                vals.extend([k, v])
            events.append(
                EventDraft(
                    dest_chain=part,
                    dest_contract="sys.txn",
                    kind=KIND_MT_PREPARE,
                    payload=encode_values(vals),
                    source_contract="sys.txn",
                )
            )
        return Receipt(txn.txn_id, "ok", writes=applied, xchain_txn=txid), events

    def _exec_gt_begin(self, chain: Chain, txn, height: int, idx: int):
        txid = txn.args[0]
        rec = self.records[txid]
        t: GeneralTxn = rec["handle"]
        writes = {
            f"sys.2pc.{txid}.phase": "prepare",
            f"sys.2pc.{txid}.participants": ",".join(rec["participants"]),
        }
        applied = chain._commit_writes(writes, height, idx)
        events = []
        for part in rec["participants"]:
            checks = [(k, ver) for c, k, ver in t.read_set if c == part]
            prefix_checks = [(p, ver) for c, p, ver in t.prefix_set if c == part]
            lock_keys = t.lock_keys.get(part, [])
            wr = [(k, v) for (c, k), v in t.write_set.items() if c == part]
            vals: list[Value] = [txid, t.caller_id, t.caller_chain, t.mode, len(checks)]
            for k, ver in checks:
                vals.extend([k, ver[0], ver[1]])
            vals.append(len(prefix_checks))
            for p, ver in prefix_checks:
                vals.extend([p, ver[0], ver[1]])
            vals.append(len(lock_keys))
            vals.extend(lock_keys)
            vals.append(len(wr))
            for k, v in wr:
                vals.extend([k, v])
            events.append(
                EventDraft(
                    dest_chain=part,
                    dest_contract="sys.txn",
                    kind=KIND_GT_PREPARE,
                    payload=encode_values(vals),
                    source_contract="sys.txn",
                )
            )
        return Receipt(txn.txn_id, "ok", writes=applied, xchain_txn=txid), events

    def _exec_decide(
        self, chain: Chain, txid: str, decision: str, reason: str, txn, height: int, idx: int
    ):
        rec = self.records.get(txid)
        if rec is None or rec["decision"] is not None:
            return Receipt(txn.txn_id, "ok", writes=()), []
        rec["decision"] = decision
        rec["reason"] = reason
        writes = {
            f"sys.2pc.{txid}.decision": decision,
            f"sys.2pc.{txid}.reason": reason,
        }
        applied = chain._commit_writes(writes, height, idx)
        kind = KIND_MT_DECIDE if rec["type"] == "mini" else KIND_GT_DECIDE
        events = [
            EventDraft(
                dest_chain=part,
                dest_contract="sys.txn",
                kind=kind,
                payload=encode_values([txid, decision, reason]),
                source_contract="sys.txn",
            )
            for part in rec["participants"]
        ]
        self._log_xtxn(txid)
        self._complete(txid)
        return Receipt(txn.txn_id, "ok", writes=applied, xchain_txn=txid), events

    def _complete(self, txid: str) -> None:
        rec = self.records[txid]
        fut = rec["future"]
        handle = rec.get("handle")
        if rec["decision"] == "commit":
            if handle is not None:
                handle.status = ST_COMMITTED
            if fut is not None:
                fut.set_result(Committed(read_values=dict(rec["read_values"])))
        else:
            self.sim.meter.abort(rec["reason"] or "abort")
            if handle is not None:
                handle.status = ST_ABORTED
            if fut is not None:
                fut.set_result(Aborted(rec["reason"]))

    # --- participant side ---

    def _handle_event(self, chain: Chain, event: Event, txn, height: int, idx: int):
        kind = event.kind
        if kind == KIND_MT_PREPARE:
            return self._exec_mt_prepare(chain, event, txn, height, idx)
        if kind == KIND_GT_PREPARE:
            return self._exec_gt_prepare(chain, event, txn, height, idx)
        if kind in (KIND_MT_VOTE, KIND_GT_VOTE):
            return self._exec_vote(chain, event, txn, height, idx)
        if kind in (KIND_MT_DECIDE, KIND_GT_DECIDE):
            vals, _ = decode_values(event.payload, 0)
            return self._exec_apply(chain, vals[0], vals[1], txn, height, idx, vals[2])
        raise EncodingError(f"unexpected protocol event kind {kind}")

    def _vote_event(self, chain: Chain, coordinator: str, txid: str, vote: str, reason: str,
                    reads: list[tuple[str, Value]], kind: int) -> EventDraft:
        vals: list[Value] = [txid, chain.chain_id, vote, reason, len(reads)]
        for k, v in reads:
            vals.extend([k, v])
        return EventDraft(
            dest_chain=coordinator,
            dest_contract="sys.txn",
            kind=kind,
            payload=encode_values(vals),
            source_contract="sys.txn",
        )

    def _check_write_policy(self, chain: Chain, key: str, caller_id: str, caller_chain: str, height: int):
        if key.startswith("sys."):
            return "writes to the sys namespace are reserved"
        contract = self._owning_contract(chain, key)
        if not contract:
            return None
        rel = key[len(contract) + 1 :]
        decision = chain.evaluate_policy(contract, "write", rel, caller_id, caller_chain, height)
        if not decision.allowed:
            return decision.reason or "policy denied"
        return None

    def _check_read_policy_key(self, chain: Chain, key: str, caller_id: str, caller_chain: str, height: int):
        if key.startswith("sys."):
            return None
        contract = self._owning_contract(chain, key)
        if not contract:
            return None
        rel = key[len(contract) + 1 :]
        decision = chain.evaluate_policy(contract, "read", rel, caller_id, caller_chain, height)
        if not decision.allowed:
            return decision.reason or "policy denied"
        return None

    def _exec_mt_prepare(self, chain: Chain, event: Event, txn, height: int, idx: int):
        vals, _ = decode_values(event.payload, 0)
        cursor = 0
        txid = vals[cursor]; cursor += 1
        caller_id = vals[cursor]; cursor += 1
        coordinator = vals[cursor]; cursor += 1
        n_cmp = vals[cursor]; cursor += 1
        compares = []
        for _ in range(n_cmp):
            compares.append((vals[cursor], vals[cursor + 1]))
            cursor += 2
        n_reads = vals[cursor]; cursor += 1
        read_keys = vals[cursor : cursor + n_reads]
        cursor += n_reads
        n_writes = vals[cursor]; cursor += 1
        writes = []
        for _ in range(n_writes):
            writes.append((vals[cursor], vals[cursor + 1]))
            cursor += 2

        marker = f"sys.mt.{txid}.seen"
        if chain.current_value(marker) is not None:
            return Receipt(txn.txn_id, "ok", writes=(), xchain_txn=txid), []
        state_writes = {marker: True}

        vote, reason = "yes", ""
        reads: list[tuple[str, Value]] = []
        # policy over write targets and read keys, then compares, then locks
        for key, _ in writes:
            denial = self._check_write_policy(chain, key, caller_id, event.source_chain, height)
            if denial is not None:
                vote, reason = "no", f"PolicyDenied: {denial}"
                break
        if vote == "yes":
            for key in read_keys:
                denial = self._check_read_policy_key(chain, key, caller_id, event.source_chain, height)
                if denial is not None:
                    vote, reason = "no", f"PolicyDenied: {denial}"
                    break
        if vote == "yes":
            for key, expected in compares:
                if chain.current_value(key) != expected:
                    vote, reason = "no", f"CompareFailed: {chain.chain_id}:{key}"
                    break
        if vote == "yes":
            locked = []
            for key, _ in writes:
                if chain.locks.try_lock(key, txid):
                    locked.append(key)
                    self._log_lock(chain.chain_id, "acquire", key, txid)
                else:
                    vote, reason = "no", f"LockConflict: {key}"
                    if locked and chain.locks.release_owner(txid):
                        self._log_lock(chain.chain_id, "release", "*", txid)
                    break
        if vote == "yes":
            for key in read_keys:
                reads.append((key, chain.current_value(key)))
            self._pending[(txid, chain.chain_id)] = list(writes)
            state_writes[f"sys.mt.{txid}.vote"] = "yes"
            self._arm_decision_poll(txid, chain.chain_id, coordinator)
        applied = chain._commit_writes(state_writes, height, idx)
        out = [self._vote_event(chain, coordinator, txid, vote, reason, reads, KIND_MT_VOTE)]
        return Receipt(txn.txn_id, "ok", writes=applied, xchain_txn=txid), out

    def _exec_gt_prepare(self, chain: Chain, event: Event, txn, height: int, idx: int):
        vals, _ = decode_values(event.payload, 0)
        cursor = 0
        txid = vals[cursor]; cursor += 1
        caller_id = vals[cursor]; cursor += 1
        caller_chain = vals[cursor]; cursor += 1
        mode = vals[cursor]; cursor += 1
        n_checks = vals[cursor]; cursor += 1
        checks = []
        for _ in range(n_checks):
            checks.append((vals[cursor], (vals[cursor + 1], vals[cursor + 2])))
            cursor += 3
        n_prefix = vals[cursor]; cursor += 1
        prefix_checks = []
        for _ in range(n_prefix):
            prefix_checks.append((vals[cursor], (vals[cursor + 1], vals[cursor + 2])))
            cursor += 3
        n_locks = vals[cursor]; cursor += 1
        lock_keys = vals[cursor : cursor + n_locks]
        cursor += n_locks
        n_writes = vals[cursor]; cursor += 1
        writes = []
        for _ in range(n_writes):
            writes.append((vals[cursor], vals[cursor + 1]))
            cursor += 2

        marker = f"sys.gt.{txid}.seen"
        if chain.current_value(marker) is not None:
            return Receipt(txn.txn_id, "ok", writes=(), xchain_txn=txid), []
        state_writes = {marker: True}

        vote, reason = "yes", ""
        for key, _ in writes:
            denial = self._check_write_policy(chain, key, caller_id, caller_chain, height)
            if denial is not None:
                vote, reason = "no", f"PolicyDenied: {denial}"
                break
        if vote == "yes" and mode == MODE_OCC:
            # first-committer-wins: newer versions abort the transaction
            for key, ver in checks:
                current = chain.current_version(key) or (0, 0)
                if current != ver:
                    vote, reason = "no", f"VersionConflict: {key}"
                    break
            if vote == "yes":
                for prefix, ver in prefix_checks:
                    if chain.latest_version_under(prefix) != ver:
                        vote, reason = "no", f"VersionConflict: {prefix}*"
                        break
        if vote == "yes" and mode == MODE_LOCKS:
            for key in lock_keys:
                holder_ok = (
                    chain.locks.prefix.get(key[:-1]) == txid
                    if key.endswith("*")
                    else chain.locks.exact.get(key) == txid
                )
                if not holder_ok:
                    vote, reason = "no", f"LockLost: {key}"
                    break
        if vote == "yes":
            acquired = []
            for key, _ in writes:
                if chain.locks.exact.get(key) == txid or self._covered_by_prefix(chain, key, txid):
                    continue
                if chain.locks.try_lock(key, txid):
                    acquired.append(key)
                    self._log_lock(chain.chain_id, "acquire", key, txid)
                else:
                    vote, reason = "no", f"LockConflict: {key}"
                    if chain.locks.release_owner(txid):
                        self._log_lock(chain.chain_id, "release", "*", txid)
                    break
        if vote == "yes":
            self._pending[(txid, chain.chain_id)] = list(writes)
            state_writes[f"sys.gt.{txid}.vote"] = "yes"
            rec = self.records.get(txid)
            coordinator = rec["coordinator"] if rec else caller_chain
            self._arm_decision_poll(txid, chain.chain_id, coordinator)
        elif mode == MODE_LOCKS:
            # a no-vote releases every lock this txn holds here
            if chain.locks.release_owner(txid):
                self._log_lock(chain.chain_id, "release", "*", txid)
        rec = self.records.get(txid)
        coordinator = rec["coordinator"] if rec else caller_chain
        applied = chain._commit_writes(state_writes, height, idx)
        out = [self._vote_event(chain, coordinator, txid, vote, reason, [], KIND_GT_VOTE)]
        return Receipt(txn.txn_id, "ok", writes=applied, xchain_txn=txid), out

    def _covered_by_prefix(self, chain: Chain, key: str, owner: str) -> bool:
        return any(key.startswith(p) for p, o in chain.locks.prefix.items() if o == owner)

    def _exec_vote(self, chain: Chain, event: Event, txn, height: int, idx: int):
        vals, _ = decode_values(event.payload, 0)
        txid, part, vote, reason = vals[0], vals[1], vals[2], vals[3]
        n_reads = vals[4]
        reads = [(vals[5 + 2 * i], vals[6 + 2 * i]) for i in range(n_reads)]
        rec = self.records.get(txid)
        if rec is None:
            return Receipt(txn.txn_id, "ok", writes=()), []
        writes = {f"sys.2pc.{txid}.vote.{part}": f"{vote}:{reason}"}
        applied = chain._commit_writes(writes, height, idx)
        if rec["decision"] is not None:
            return Receipt(txn.txn_id, "ok", writes=applied, xchain_txn=txid), []
        if part not in rec["votes"]:
            rec["votes"][part] = (vote, reason)
            for k, v in reads:
                rec["read_values"][(part, k)] = v
        if len(rec["votes"]) == len(rec["participants"]):
            if not rec["rt_prepare_done"]:
                rec["rt_prepare_done"] = True
                self.sim.meter.round_trip(txid)
            no_votes = [(p, r) for p, (v, r) in rec["votes"].items() if v != "yes"]
            if no_votes:
                decision, reason = "abort", no_votes[0][1]
            else:
                decision, reason = "commit", ""
            receipt, events = self._exec_decide(chain, txid, decision, reason, txn, height, idx)
            merged = Receipt(
                txn.txn_id, "ok", writes=applied + receipt.writes, xchain_txn=txid
            )
            return merged, events
        return Receipt(txn.txn_id, "ok", writes=applied, xchain_txn=txid), []

    def _exec_apply(self, chain: Chain, txid: str, decision: str, txn, height: int, idx: int, reason: str = ""):
        marker = f"sys.applied.{txid}"
        if chain.current_value(marker) is not None:
            return Receipt(txn.txn_id, "ok", writes=(), xchain_txn=txid), []
        state_writes: dict[str, Value] = {marker: decision}
        if decision == "commit":
            for key, value in self._pending.get((txid, chain.chain_id), []):
                state_writes[key] = value
        released = chain.locks.release_owner(txid)
        if released:
            self._log_lock(chain.chain_id, "release", "*", txid)
        self._pending.pop((txid, chain.chain_id), None)
        applied = chain._commit_writes(state_writes, height, idx)
        rec = self.records.get(txid)
        if rec is not None:
            rec["applied"].add(chain.chain_id)
            if (
                not rec["rt_decide_done"]
                and rec["decision"] is not None
                and rec["applied"] >= set(rec["participants"])
            ):
                rec["rt_decide_done"] = True
                self.sim.meter.round_trip(txid)
        return Receipt(txn.txn_id, "ok", writes=applied, xchain_txn=txid), []

    # ------------------------------------------------ decision recovery

    def _arm_decision_poll(self, txid: str, chain_id: str, coordinator: str) -> None:
        key = (txid, chain_id)
        if key in self._polling:
            return
        self._polling.add(key)
        self.sim.call_later(
            self.sim.config.decision_poll,
            lambda: self._poll_decision(txid, chain_id, coordinator),
        )

    def _poll_decision(self, txid: str, chain_id: str, coordinator: str) -> None:
        self._polling.discard((txid, chain_id))
        chain = self.sim.chains[chain_id]
        if chain.current_value(f"sys.applied.{txid}") is not None:
            return  # decision already applied here
        req = self.make_read_request(
            coordinator,
            key=f"sys.2pc.{txid}.decision",
            caller_id="sys.txn",
            caller_chain=chain_id,
        )
        fut = self.read_async(req, recovery=True)
        self.sim.spawn(self._poll_complete_task(txid, chain_id, coordinator, fut))

    def _poll_complete_task(self, txid: str, chain_id: str, coordinator: str, fut: Future):
        try:
            resp = yield fut
        except Exception:
            resp = None
        chain = self.sim.chains[chain_id]
        if chain.current_value(f"sys.applied.{txid}") is not None:
            return None
        if resp is not None and resp.value in ("commit", "abort"):
            chain.submit_sys_txn("sys.txn", "gt_apply", [txid, resp.value], caller_id="sys.txn")
            return None
        # undecided: poll again later
        self._arm_decision_poll(txid, chain_id, coordinator)
        return None

    # ------------------------------------------------------------ logging

    def _log_lock(self, chain_id: str, op: str, key: str, owner: str) -> None:
        if self.sim.log is not None:
            self.sim.log.record("lock", chain=chain_id, op=op, key=key, owner=owner)

    def _log_xtxn(self, txid: str) -> None:
        if self.sim.log is None:
            return
        rec = self.records.get(txid)
        if rec is None:
            return
        from .runlog import value_to_jsonable

        if rec["type"] == "mini":
            mt: MiniTxn = rec["mt"]
            writes = [[c, k, value_to_jsonable(v)] for c, k, v in mt.writes]
        else:
            t: GeneralTxn = rec["handle"]
            writes = [
                [c, k, value_to_jsonable(v)] for (c, k), v in sorted(t.write_set.items())
            ]
        self.sim.log.record(
            "xtxn",
            txn=txid,
            type=rec["type"],
            coordinator=rec["coordinator"],
            decision=rec["decision"],
            reason=rec["reason"],
            participants=sorted(rec["participants"]),
            writes=writes,
        )

    def two_pc_record(self, txid: str) -> Optional[TwoPCRecord]:
        """Typed view over the coordinator's ledger entries for a transaction."""
        rec = self.records.get(txid)
        if rec is None:
            return None
        coord = self.sim.chains[rec["coordinator"]]
        decision = coord.read_state(f"sys.2pc.{txid}.decision")
        phase = decision or coord.read_state(f"sys.2pc.{txid}.phase")
        if phase is None:
            return None
        votes = {}
        for part in rec["participants"]:
            raw = coord.read_state(f"sys.2pc.{txid}.vote.{part}")
            if isinstance(raw, str) and ":" in raw:
                vote, _, reason = raw.partition(":")
                votes[part] = (vote, reason)
        return TwoPCRecord(txn_id=txid, phase=phase, votes=votes)
