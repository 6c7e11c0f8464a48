"""Ledger state and execution semantics for transactions, bundles and blocks.

``ChainState`` is treated as an immutable snapshot: every operation returns
a new state and leaves its input untouched. Execution inside a block runs on
a private scratch copy so a block costs one copy, not one per transaction.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Mapping, Optional, Union

from . import amm
from .amm import Direction, Pool
from .errors import DuplicateTx, GasLimitExceeded, InsufficientBalance, UnknownPool
from .fixed import TokenAmount

GAS_ASSET = "Y"
ASSETS = ("X", "Y")


class TxKind(str, Enum):
    SWAP = "Swap"
    TRANSFER = "Transfer"
    NOOP = "Noop"


GAS_USED = {TxKind.SWAP: 100, TxKind.TRANSFER: 21, TxKind.NOOP: 10}


@dataclass(frozen=True)
class SwapIntent:
    pool_id: str
    direction: Direction
    amount_in: TokenAmount
    min_out: TokenAmount = TokenAmount(0)

    def __post_init__(self):
        object.__setattr__(self, "direction", Direction(self.direction))
        if self.amount_in.micros <= 0:
            raise ValueError("SwapIntent.amount_in must be positive")


@dataclass(frozen=True)
class ArbIntent:
    """Two-leg round trip: Y -> X on ``buy_pool``, all X -> Y on ``sell_pool``.

    Reverts unless the Y returned is at least ``min_out``.
    """

    buy_pool: str
    sell_pool: str
    amount_in: TokenAmount
    min_out: TokenAmount = TokenAmount(0)

    def __post_init__(self):
        if self.amount_in.micros <= 0:
            raise ValueError("ArbIntent.amount_in must be positive")
        if self.buy_pool == self.sell_pool:
            raise ValueError("ArbIntent needs two distinct pools")


@dataclass(frozen=True)
class TransferIntent:
    recipient: str
    asset: str
    amount: TokenAmount


Payload = Union[SwapIntent, ArbIntent, TransferIntent, None]


@dataclass(frozen=True)
class Transaction:
    id: int
    sender: str
    kind: TxKind
    payload: Payload
    gas_price: TokenAmount
    gas_used: int = 0
    origin_time: int = 0
    label: str = ""  # free-form attribution tag (attack id, role); not consensus data

    def __post_init__(self):
        object.__setattr__(self, "kind", TxKind(self.kind))
        if self.gas_used == 0:
            object.__setattr__(self, "gas_used", GAS_USED[self.kind])
        if self.gas_used <= 0:
            raise ValueError("gas_used must be positive")
        if self.kind is TxKind.SWAP and not isinstance(self.payload, (SwapIntent, ArbIntent)):
            raise ValueError("Swap transaction needs a SwapIntent or ArbIntent payload")
        if self.kind is TxKind.TRANSFER and not isinstance(self.payload, TransferIntent):
            raise ValueError("Transfer transaction needs a TransferIntent payload")

    @property
    def recipient(self) -> Optional[str]:
        if isinstance(self.payload, TransferIntent):
            return self.payload.recipient
        return None

    @property
    def gas_cost(self) -> TokenAmount:
        return TokenAmount(self.gas_price.micros * self.gas_used)

    def pools_touched(self) -> tuple[str, ...]:
        p = self.payload
        if isinstance(p, SwapIntent):
            return (p.pool_id,)
        if isinstance(p, ArbIntent):
            return (p.buy_pool, p.sell_pool)
        return ()


@dataclass(frozen=True)
class Bundle:
    txs: tuple[Transaction, ...]
    submitter: str
    atomic: bool = True

    def __post_init__(self):
        object.__setattr__(self, "txs", tuple(self.txs))
        if not self.txs:
            raise ValueError("Bundle must contain at least one transaction")
        if not self.atomic:
            raise ValueError("bundles are always atomic")

    @property
    def gas_used(self) -> int:
        return sum(t.gas_used for t in self.txs)

    @property
    def effective_gas_price(self) -> TokenAmount:
        return TokenAmount(sum(t.gas_cost.micros for t in self.txs) // self.gas_used)

    @property
    def ids(self) -> tuple[int, ...]:
        return tuple(t.id for t in self.txs)


@dataclass(frozen=True)
class Block:
    height: int
    builder: str
    payload: tuple[Transaction, ...]
    bid: TokenAmount
    gas_limit: int
    proposer: str = ""
    bundles: tuple[tuple[int, int], ...] = ()  # half-open payload spans executed atomically

    def __post_init__(self):
        object.__setattr__(self, "payload", tuple(self.payload))
        object.__setattr__(self, "bundles", tuple(tuple(s) for s in self.bundles))

    @property
    def gas_used(self) -> int:
        return sum(t.gas_used for t in self.payload)

    @property
    def tx_ids(self) -> tuple[int, ...]:
        return tuple(t.id for t in self.payload)


class ReceiptStatus(str, Enum):
    SUCCESS = "Success"
    REVERTED = "Reverted"
    DROPPED = "Dropped"


@dataclass(frozen=True)
class Receipt:
    tx_id: int
    status: ReceiptStatus
    gas_paid: TokenAmount = TokenAmount(0)
    amount_out: TokenAmount = TokenAmount(0)
    # sender's non-gas balance changes, as (asset, signed micros)
    deltas: tuple[tuple[str, int], ...] = ()
    error: str = ""

    @property
    def ok(self) -> bool:
        return self.status is ReceiptStatus.SUCCESS


@dataclass(frozen=True)
class ChainState:
    height: int
    pools: Mapping[str, Pool]
    balances: Mapping[tuple[str, str], TokenAmount]
    included: frozenset = field(default_factory=frozenset)

    @classmethod
    def genesis(cls, pools: Iterable[Pool], balances: Mapping[tuple[str, str], TokenAmount]) -> "ChainState":
        return cls(0, {p.id: p for p in pools}, dict(balances), frozenset())

    def balance(self, agent: str, asset: str) -> TokenAmount:
        return self.balances.get((agent, asset), TokenAmount(0))

    def totals(self) -> dict[str, int]:
        """Total micros of each asset across balances and pool reserves."""
        out = {a: 0 for a in ASSETS}
        for (_, asset), v in self.balances.items():
            out[asset] = out.get(asset, 0) + v.micros
        for p in self.pools.values():
            out["X"] += p.reserve_x.micros
            out["Y"] += p.reserve_y.micros
        return out

    def to_dict(self) -> dict:
        return {
            "height": self.height,
            "pools": [pool_to_dict(self.pools[k]) for k in sorted(self.pools)],
            "balances": [
                [agent, asset, str(v)]
                for (agent, asset), v in sorted(self.balances.items())
                if v.micros
            ],
            "included": sorted(self.included),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChainState":
        pools = [pool_from_dict(p) for p in d["pools"]]
        balances = {(a, s): TokenAmount.of(v) for a, s, v in d["balances"]}
        return cls(int(d["height"]), {p.id: p for p in pools}, balances, frozenset(d.get("included", ())))

    def state_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


class _Scratch:
    """Mutable working copy of a ChainState used during execution.

    The chain's included-id set is shared read-only; new ids go to ``added``.
    """

    __slots__ = ("pools", "balances", "base_included", "added")

    def __init__(self, state: ChainState):
        self.pools = dict(state.pools)
        self.balances = {k: v.micros for k, v in state.balances.items()}
        self.base_included = state.included
        self.added: set = set()

    def snapshot(self):
        return dict(self.pools), dict(self.balances), set(self.added)

    def restore(self, snap) -> None:
        self.pools, self.balances, self.added = dict(snap[0]), dict(snap[1]), set(snap[2])

    def bal(self, agent: str, asset: str) -> int:
        return self.balances.get((agent, asset), 0)

    def move(self, agent: str, asset: str, delta: int) -> None:
        v = self.balances.get((agent, asset), 0) + delta
        if v < 0:
            raise InsufficientBalance(f"{agent} would hold {v} micros of {asset}")
        self.balances[(agent, asset)] = v

    def freeze(self, height: int) -> ChainState:
        return ChainState(
            height,
            dict(self.pools),
            {k: TokenAmount(v) for k, v in self.balances.items() if v},
            self.base_included | self.added if self.added else self.base_included,
        )


def _charge_gas(s: _Scratch, tx: Transaction, coinbase: str) -> int:
    cost = tx.gas_cost.micros
    if cost:
        s.move(tx.sender, GAS_ASSET, -cost)
        s.move(coinbase, GAS_ASSET, cost)
    return cost


def _check_funds(s: _Scratch, tx: Transaction) -> None:
    need = {GAS_ASSET: tx.gas_cost.micros}
    p = tx.payload
    if isinstance(p, SwapIntent):
        if p.pool_id not in s.pools:
            raise UnknownPool(p.pool_id)
        a = p.direction.asset_in
        need[a] = need.get(a, 0) + p.amount_in.micros
    elif isinstance(p, ArbIntent):
        for pid in (p.buy_pool, p.sell_pool):
            if pid not in s.pools:
                raise UnknownPool(pid)
        need["Y"] = need.get("Y", 0) + p.amount_in.micros
    elif isinstance(p, TransferIntent):
        need[p.asset] = need.get(p.asset, 0) + p.amount.micros
    for asset, m in need.items():
        if s.bal(tx.sender, asset) < m:
            raise InsufficientBalance(f"{tx.sender} lacks {asset} for tx {tx.id}")


def _apply(s: _Scratch, tx: Transaction, coinbase: str) -> Receipt:
    """Execute one tx on the scratch. Raises UnknownPool/InsufficientBalance before touching state."""
    _check_funds(s, tx)
    gas = _charge_gas(s, tx, coinbase)
    s.added.add(tx.id)
    p = tx.payload
    if isinstance(p, SwapIntent):
        pool = s.pools[p.pool_id]
        new_pool, out = amm.apply_swap(pool, p.direction, p.amount_in)
        if out.micros < p.min_out.micros:
            return Receipt(tx.id, ReceiptStatus.REVERTED, TokenAmount(gas), out, (), "MinOut")
        s.pools[p.pool_id] = new_pool
        a_in, a_out = p.direction.asset_in, p.direction.asset_out
        s.move(tx.sender, a_in, -p.amount_in.micros)
        s.move(tx.sender, a_out, out.micros)
        return Receipt(tx.id, ReceiptStatus.SUCCESS, TokenAmount(gas), out,
                       ((a_in, -p.amount_in.micros), (a_out, out.micros)))
    if isinstance(p, ArbIntent):
        x, y, b2, s2 = amm.two_pool_round_trip(s.pools[p.buy_pool], s.pools[p.sell_pool], p.amount_in)
        if y.micros < p.min_out.micros or x.micros == 0:
            return Receipt(tx.id, ReceiptStatus.REVERTED, TokenAmount(gas), y, (), "MinOut")
        s.pools[p.buy_pool] = b2
        s.pools[p.sell_pool] = s2
        s.move(tx.sender, "Y", y.micros - p.amount_in.micros)
        return Receipt(tx.id, ReceiptStatus.SUCCESS, TokenAmount(gas), y, (("Y", y.micros - p.amount_in.micros),))
    if isinstance(p, TransferIntent):
        s.move(tx.sender, p.asset, -p.amount.micros)
        s.move(p.recipient, p.asset, p.amount.micros)
        return Receipt(tx.id, ReceiptStatus.SUCCESS, TokenAmount(gas), TokenAmount(0),
                       ((p.asset, -p.amount.micros),))
    return Receipt(tx.id, ReceiptStatus.SUCCESS, TokenAmount(gas))


def execute_transaction(state: ChainState, tx: Transaction, coinbase: str = "coinbase") -> tuple[ChainState, Receipt]:
    """Execute ``tx`` alone on ``state``; gas goes to ``coinbase``.

    A min_out violation yields a Reverted receipt and charges gas. Missing
    funds or an unknown pool raise and leave the state untouched.
    """
    if tx.id in state.included:
        raise DuplicateTx(f"tx {tx.id} already included")
    s = _Scratch(state)
    receipt = _apply(s, tx, coinbase)
    return s.freeze(state.height), receipt


def _validate_block(state: ChainState, block: Block) -> None:
    if block.gas_used > block.gas_limit:
        raise GasLimitExceeded(f"block {block.height}: {block.gas_used} > {block.gas_limit}")
    seen = set()
    for tx in block.payload:
        if tx.id in seen or tx.id in state.included:
            raise DuplicateTx(f"block {block.height}: duplicate tx {tx.id}")
        seen.add(tx.id)
    prev_end = 0
    for start, end in sorted(block.bundles):
        if not (prev_end <= start < end <= len(block.payload)):
            raise ValueError(f"block {block.height}: bad bundle span ({start}, {end})")
        prev_end = end


def _run_payload(s: _Scratch, block: Block) -> list[Receipt]:
    coinbase = block.builder
    spans = {start: end for start, end in block.bundles}
    receipts: list[Receipt] = []
    i = 0
    n = len(block.payload)
    while i < n:
        end = spans.get(i)
        if end is None:
            tx = block.payload[i]
            try:
                receipts.append(_apply(s, tx, coinbase))
            except (InsufficientBalance, UnknownPool) as exc:
                receipts.append(Receipt(tx.id, ReceiptStatus.DROPPED, error=type(exc).__name__))
            i += 1
            continue
        snap = s.snapshot()
        part: list[Receipt] = []
        failed = False
        for tx in block.payload[i:end]:
            try:
                r = _apply(s, tx, coinbase)
            except (InsufficientBalance, UnknownPool):
                failed = True
                break
            part.append(r)
            if not r.ok:
                failed = True
                break
        if failed:
            s.restore(snap)
            part = []
            for tx in block.payload[i:end]:
                s.added.add(tx.id)
                try:
                    paid = _charge_gas(s, tx, coinbase)
                except InsufficientBalance:
                    paid = 0
                part.append(Receipt(tx.id, ReceiptStatus.REVERTED, TokenAmount(paid), error="BundleReverted"))
        receipts.extend(part)
        i = end
    return receipts


def execute_block(state: ChainState, block: Block) -> tuple[ChainState, list[Receipt]]:
    """Execute a whole block; raises (and changes nothing) if the block is invalid.

    Dropped transactions (unfunded) are not included and pay nothing. The
    builder collects all gas, then pays ``block.bid`` to the proposer.
    """
    s, receipts = _execute(state, block)
    return s.freeze(block.height), receipts


def _execute(state: ChainState, block: Block) -> tuple[_Scratch, list[Receipt]]:
    _validate_block(state, block)
    s = _Scratch(state)
    receipts = _run_payload(s, block)
    if block.bid.micros and block.proposer:
        s.move(block.builder, GAS_ASSET, -block.bid.micros)
        s.move(block.proposer, GAS_ASSET, block.bid.micros)
    return s, receipts


def simulate_block(state: ChainState, block: Block) -> tuple[dict, dict, list[Receipt]]:
    """Execute without building a new ChainState.

    Returns (pools, balances in micros, receipts); cheaper than
    ``execute_block`` when only the outcome is needed.
    """
    s, receipts = _execute(state, block)
    return s.pools, s.balances, receipts


def apply_transfer(state: ChainState, sender: str, recipient: str, asset: str, amount: TokenAmount) -> ChainState:
    """Off-block balance transfer (used for regulator penalties)."""
    s = _Scratch(state)
    s.move(sender, asset, -amount.micros)
    s.move(recipient, asset, amount.micros)
    return s.freeze(state.height)


# -- serialization used by the event log -----------------------------------

def pool_to_dict(p: Pool) -> dict:
    return {"id": p.id, "x": str(p.reserve_x), "y": str(p.reserve_y), "fee_bps": p.fee_bps}


def pool_from_dict(d: dict) -> Pool:
    return Pool(d["id"], TokenAmount.of(d["x"]), TokenAmount.of(d["y"]), int(d.get("fee_bps", 0)))


def tx_to_dict(tx: Transaction) -> dict:
    d = {
        "id": tx.id,
        "sender": tx.sender,
        "kind": tx.kind.value,
        "gas_price": str(tx.gas_price),
        "gas_used": tx.gas_used,
        "origin": tx.origin_time,
    }
    p = tx.payload
    if isinstance(p, SwapIntent):
        d["swap"] = [p.pool_id, p.direction.value, str(p.amount_in), str(p.min_out)]
    elif isinstance(p, ArbIntent):
        d["arb"] = [p.buy_pool, p.sell_pool, str(p.amount_in), str(p.min_out)]
    elif isinstance(p, TransferIntent):
        d["transfer"] = [p.recipient, p.asset, str(p.amount)]
    if tx.label:
        d["label"] = tx.label
    return d


def tx_from_dict(d: dict) -> Transaction:
    payload: Payload = None
    if "swap" in d:
        pid, direction, a, m = d["swap"]
        payload = SwapIntent(pid, Direction(direction), TokenAmount.of(a), TokenAmount.of(m))
    elif "arb" in d:
        b, s, a, m = d["arb"]
        payload = ArbIntent(b, s, TokenAmount.of(a), TokenAmount.of(m))
    elif "transfer" in d:
        r, asset, a = d["transfer"]
        payload = TransferIntent(r, asset, TokenAmount.of(a))
    return Transaction(
        int(d["id"]), d["sender"], TxKind(d["kind"]), payload,
        TokenAmount.of(d["gas_price"]), int(d["gas_used"]), int(d.get("origin", 0)), d.get("label", ""),
    )


def block_to_dict(b: Block) -> dict:
    return {
        "height": b.height,
        "builder": b.builder,
        "proposer": b.proposer,
        "bid": str(b.bid),
        "gas_limit": b.gas_limit,
        "bundles": [list(s) for s in b.bundles],
        "payload": [tx_to_dict(t) for t in b.payload],
    }


def block_from_dict(d: dict) -> Block:
    return Block(
        int(d["height"]), d["builder"], tuple(tx_from_dict(t) for t in d["payload"]),
        TokenAmount.of(d["bid"]), int(d["gas_limit"]), d.get("proposer", ""),
        tuple(tuple(s) for s in d.get("bundles", ())),
    )


def with_gas(tx: Transaction, gas_used: int) -> Transaction:
    return replace(tx, gas_used=gas_used)


def gas_priority_key(tx: Transaction) -> tuple[int, int]:
    """Sort key for gas-price-descending order with lower id first on ties."""
    return (-tx.gas_price.micros, tx.id)


class IdAllocator:
    """Monotone transaction id source; separate instances keep id spaces apart."""

    def __init__(self, start: int):
        self._next = start

    def __call__(self) -> int:
        v = self._next
        self._next += 1
        return v

    @property
    def next_value(self) -> int:
        return self._next


class BlockSimulator:
    """Incremental execution used by builders to pack a block.

    ``try_add`` applies a unit (a lone tx or an atomic bundle) on top of the
    units already accepted and reports whether it was kept. A bundle is kept
    only if every tx succeeds; a lone tx is kept unless it would be dropped.
    """

    def __init__(self, state: ChainState, coinbase: str):
        self._s = _Scratch(state)
        self.coinbase = coinbase

    def try_add(self, txs: tuple[Transaction, ...], atomic: bool) -> Optional[list[Receipt]]:
        snap = self._s.snapshot()
        out: list[Receipt] = []
        for tx in txs:
            if tx.id in self._s.base_included or tx.id in self._s.added:
                self._s.restore(snap)
                return None
            try:
                r = _apply(self._s, tx, self.coinbase)
            except (InsufficientBalance, UnknownPool):
                self._s.restore(snap)
                return None
            if atomic and not r.ok:
                self._s.restore(snap)
                return None
            out.append(r)
        return out

    @property
    def pools(self) -> dict:
        return self._s.pools

    def balance(self, agent: str, asset: str) -> int:
        return self._s.bal(agent, asset)
