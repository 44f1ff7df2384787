"""Three-chain auction: Auctioneer on a ticket chain, Bidder contracts on
coin chains, wired through policies, the event bus, and general cross-chain
transactions.

The conclude flow is an agent task: it reads every bid through the
transaction layer (prefix reads guard against late-bid phantoms), picks the
winner under exact rational exchange rates, and settles everything in one
2PC commit: ticket ownership, winner escrow deduction credited to the
seller, loser refunds, and status flips on all chains.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .bus import KIND_APP_BASE
from .chain import Chain, Contract
from .errors import (
    AlreadyEscrowed,
    InsufficientFunds,
    NotOwner,
    TxnAborted,
)
from .sim import Simulation
from .txn import Aborted, GeneralTxn, MODE_OCC, XTxnEngine
from .values import decode_values, encode_values

KIND_START = KIND_APP_BASE  # auction-start notification to Bidder contracts


@dataclass(frozen=True)
class AuctionOutcome:
    status: str  # concluded | cancelled
    winner_chain: str = ""
    winner_user: str = ""
    winner_amount: int = 0  # normalized, common units
    attempts: int = 1


class AuctioneerContract(Contract):
    contract_id = "Auctioneer"

    def _init(self, ctx, args):
        # args: comma-separated "<chain>:<contract>" bidder endpoints
        ctx.put("config.bidders", args[0])

    def _mint_ticket(self, ctx, args):
        ticket_id, owner = args
        ctx.put(f"ticket.{ticket_id}.owner", owner)
        ctx.put(f"ticket.{ticket_id}.escrowed", False)

    def _start_auction(self, ctx, args):
        ticket_id, auction_id, close_height = args
        owner = ctx.get(f"ticket.{ticket_id}.owner")
        if owner != ctx.caller_id:
            raise NotOwner(f"{ctx.caller_id} does not own {ticket_id}")
        if ctx.get(f"ticket.{ticket_id}.escrowed") is True:
            raise AlreadyEscrowed(ticket_id)
        ctx.put(f"ticket.{ticket_id}.escrowed", True)
        ctx.put(f"auction.{auction_id}.ticket", ticket_id)
        ctx.put(f"auction.{auction_id}.seller", ctx.caller_id)
        ctx.put(f"auction.{auction_id}.status", "open")
        ctx.put(f"auction.{auction_id}.close_height", close_height)
        payload = encode_values([auction_id, close_height])
        for endpoint in (ctx.get("config.bidders") or "").split(","):
            if not endpoint:
                continue
            chain_id, contract = endpoint.split(":")
            ctx.emit(chain_id, contract, KIND_START, payload)

    handlers = {
        "init": _init,
        "mint_ticket": _mint_ticket,
        "start_auction": _start_auction,
    }


class BidderContract(Contract):
    contract_id = "Bidder"

    def _init(self, ctx, args):
        # args: alternating user, balance pairs
        for i in range(0, len(args), 2):
            ctx.put(f"balance.{args[i]}", args[i + 1])

    def _submit_bid(self, ctx, args):
        auction_id, amount = args
        user = ctx.caller_id
        # the bid write is on behalf of the caller: delegate to the policy
        ctx.require_access("write", f"bids.{user}")
        if ctx.get("auction.id") != auction_id:
            raise TxnAborted(f"unknown auction {auction_id}")
        balance = ctx.get(f"balance.{user}") or 0
        if balance < amount:
            raise InsufficientFunds(f"{user}: {balance} < {amount}")
        ctx.put(f"balance.{user}", balance - amount)
        ctx.put(f"escrow.{user}", (ctx.get(f"escrow.{user}") or 0) + amount)
        ctx.put(f"bids.{user}", amount)

    handlers = {"init": _init, "submit_bid": _submit_bid}

    def on_event(self, ctx, event):
        if event.kind != KIND_START:
            raise TxnAborted(f"unexpected event kind {event.kind}")
        ctx.require_access("invoke", "start_auction")
        auction_id, close_height = decode_values(event.payload, 0)[0]
        ctx.put("auction.id", auction_id)
        ctx.put("auction.status", "open")
        ctx.put("auction.close_height", close_height)
        ctx.put(f"auctions.{auction_id}", ctx.height)


# settlement rules the Bidder chains attach on top of the user-facing policy
SETTLEMENT_RULES = """
allow read on bids.* when caller.chain == "{tickets}";
allow read on escrow.* when caller.chain == "{tickets}";
allow read on balance.* when caller.chain == "{tickets}";
allow write on bids.* when caller.chain == "{tickets}";
allow write on escrow.* when caller.chain == "{tickets}";
allow write on balance.* when caller.chain == "{tickets}";
allow write on auction.* when caller.chain == "{tickets}";
"""


def bidder_policy(ticket_chain: str, start_limit: int = 3, window: int = 100) -> str:
    p1 = (
        'allow write on bids.* when state("auction.status") == "open" && '
        '!exists("bids." + caller.id) && block.height <= state("auction.close_height");'
    )
    p2 = (
        f'allow invoke on start_auction when count("auctions.", '
        f"block.height - {window}, block.height) <= {start_limit};"
    )
    return p1 + "\n" + p2 + "\n" + SETTLEMENT_RULES.format(tickets=ticket_chain)


class AuctionApp:
    """Scenario-facing facade over the three-chain auction deployment."""

    def __init__(
        self,
        sim: Simulation,
        engine: XTxnEngine,
        ticket_chain: str,
        bidder_chains: list[str],
        rates: dict[str, Fraction],
    ):
        self.sim = sim
        self.engine = engine
        self.ticket_chain = ticket_chain
        self.bidder_chains = list(bidder_chains)
        self.rates = dict(rates)

    # ------------------------------------------------------------- setup

    @classmethod
    def deploy(
        cls,
        sim: Simulation,
        engine: XTxnEngine,
        ticket_chain: str,
        bidder_chains: list[str],
        rates: dict[str, Fraction],
        balances: dict[str, dict[str, int]],
        tickets: dict[str, str],
        start_limit: int = 3,
    ) -> "AuctionApp":
        app = cls(sim, engine, ticket_chain, bidder_chains, rates)
        tchain = sim.chains[ticket_chain]
        tchain.register_contract(AuctioneerContract())
        for cid in bidder_chains:
            sim.chains[cid].register_contract(BidderContract())
        sim.run_until_quiescent()  # registration block; contracts active next
        endpoints = ",".join(f"{cid}:Bidder" for cid in bidder_chains)
        tchain.submit_sys_txn("Auctioneer", "init", [endpoints])
        for ticket_id, owner in tickets.items():
            tchain.submit_sys_txn("Auctioneer", "mint_ticket", [ticket_id, owner])
        for cid in bidder_chains:
            chain = sim.chains[cid]
            init_args: list = []
            for user, balance in sorted(balances.get(cid, {}).items()):
                init_args.extend([user, balance])
            chain.submit_sys_txn("Bidder", "init", init_args)
            chain.attach_policy("Bidder", bidder_policy(ticket_chain, start_limit=start_limit))
        sim.run_until_quiescent()
        return app

    # ----------------------------------------------------------- actions

    def start_auction(self, seller: str, ticket_id: str, auction_id: str, close_height: int):
        chain = self.sim.chains[self.ticket_chain]
        txid = chain.submit_call(
            seller, "Auctioneer", "start_auction", [ticket_id, auction_id, close_height]
        )
        self.sim.run_until_quiescent()
        receipt = self._receipt_of(chain, txid)
        opened = {
            cid: self.sim.chains[cid].read_state("Bidder.auction.status") == "open"
            for cid in self.bidder_chains
        }
        return receipt, opened

    def submit_bid(self, chain_id: str, user: str, auction_id: str, amount: int, settle: bool = True):
        chain = self.sim.chains[chain_id]
        txid = chain.submit_call(user, "Bidder", "submit_bid", [auction_id, amount])
        if settle:
            self.sim.run_until_quiescent()
            return self._receipt_of(chain, txid)
        return txid

    def _receipt_of(self, chain: Chain, txid: bytes):
        for block in reversed(chain.blocks):
            for receipt in block.receipts:
                if receipt.txn_id == txid:
                    return receipt
        return None

    # ---------------------------------------------------------- conclude

    def conclude_auction(self, auction_id: str, mode: str = MODE_OCC, retries: int = 3):
        task = self.sim.spawn(self.conclude_agent(auction_id, mode, retries))
        result = self.sim.pump(task.future)
        self.sim.run_until_quiescent()
        return result

    def conclude_agent(self, auction_id: str, mode: str = MODE_OCC, retries: int = 3):
        """Agent generator: drive the general transaction, retrying aborts."""
        attempt = 0
        while True:
            attempt += 1
            t = self.engine.begin_general(self.ticket_chain, mode, caller_id="Auctioneer")
            try:
                outcome = yield from self._conclude_once(t, auction_id)
            except TxnAborted as exc:
                self.engine.abort(t, str(exc))
                raise
            if outcome is not None:
                return AuctionOutcome(
                    status=outcome.status,
                    winner_chain=outcome.winner_chain,
                    winner_user=outcome.winner_user,
                    winner_amount=outcome.winner_amount,
                    attempts=attempt,
                )
            if attempt > retries:
                return AuctionOutcome(status="aborted", attempts=attempt)
            yield self.sim.sleep(5)

    def _conclude_once(self, t: GeneralTxn, auction_id: str):
        """One settlement attempt; returns None when the commit aborted."""
        tickets = self.ticket_chain
        status = yield self.engine.txn_read_async(
            t, tickets, f"Auctioneer.auction.{auction_id}.status"
        )
        if status != "open":
            raise TxnAborted(f"auction {auction_id} is {status!r}, not open")
        ticket_id = yield self.engine.txn_read_async(
            t, tickets, f"Auctioneer.auction.{auction_id}.ticket"
        )
        seller = yield self.engine.txn_read_async(
            t, tickets, f"Auctioneer.auction.{auction_id}.seller"
        )

        # collect bids: (normalized, bid_height, chain, user, native amount)
        candidates = []
        for cid in self.bidder_chains:
            rows = yield self.engine.txn_read_prefix_async(t, cid, "Bidder.bids.")
            rate = self.rates[cid]
            for key, amount, version in rows:
                user = key.rsplit(".", 1)[1]
                candidates.append((Fraction(amount) * rate, version[0], cid, user, amount))

        if not candidates:
            yield self.engine.txn_write_async(
                t, tickets, f"Auctioneer.auction.{auction_id}.status", "cancelled"
            )
            yield self.engine.txn_write_async(
                t, tickets, f"Auctioneer.ticket.{ticket_id}.escrowed", False
            )
            for cid in self.bidder_chains:
                yield self.engine.txn_write_async(t, cid, "Bidder.auction.status", "cancelled")
            result = yield self.engine.txn_commit_async(t)
            if isinstance(result, Aborted):
                return None
            return AuctionOutcome(status="cancelled")

        # max normalized amount; ties: earlier bid height, then (chain, user)
        best = min(candidates, key=lambda c: (-c[0], c[1], c[2], c[3]))
        norm, _, win_chain, win_user, win_amount = best

        for cid in self.bidder_chains:
            rate = self.rates[cid]
            for c_norm, _, c_chain, user, amount in candidates:
                if c_chain != cid:
                    continue
                escrow = (
                    yield self.engine.txn_read_async(t, cid, f"Bidder.escrow.{user}")
                ) or 0
                if cid == win_chain and user == win_user:
                    # deduct the winning escrow; credit the seller locally
                    seller_balance = (
                        yield self.engine.txn_read_async(t, cid, f"Bidder.balance.{seller}")
                    ) or 0
                    yield self.engine.txn_write_async(
                        t, cid, f"Bidder.escrow.{user}", escrow - amount
                    )
                    yield self.engine.txn_write_async(
                        t, cid, f"Bidder.balance.{seller}", seller_balance + amount
                    )
                else:
                    balance = (
                        yield self.engine.txn_read_async(t, cid, f"Bidder.balance.{user}")
                    ) or 0
                    yield self.engine.txn_write_async(
                        t, cid, f"Bidder.balance.{user}", balance + amount
                    )
                    yield self.engine.txn_write_async(
                        t, cid, f"Bidder.escrow.{user}", escrow - amount
                    )
                yield self.engine.txn_write_async(t, cid, f"Bidder.bids.{user}", None)
            yield self.engine.txn_write_async(t, cid, "Bidder.auction.status", "concluded")

        norm_int = int(norm) if norm.denominator == 1 else int(norm.numerator // norm.denominator)
        for key, value in [
            (f"Auctioneer.ticket.{ticket_id}.owner", win_user),
            (f"Auctioneer.ticket.{ticket_id}.escrowed", False),
            (f"Auctioneer.auction.{auction_id}.status", "concluded"),
            (f"Auctioneer.auction.{auction_id}.winner_user", win_user),
            (f"Auctioneer.auction.{auction_id}.winner_chain", win_chain),
            (f"Auctioneer.auction.{auction_id}.winner_amount", norm_int),
            (f"Auctioneer.winning_bids.{auction_id}", norm_int),
        ]:
            yield self.engine.txn_write_async(t, tickets, key, value)

        result = yield self.engine.txn_commit_async(t)
        if isinstance(result, Aborted):
            return None
        return AuctionOutcome(
            status="concluded",
            winner_chain=win_chain,
            winner_user=win_user,
            winner_amount=norm_int,
        )
