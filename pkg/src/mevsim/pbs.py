"""Proposer/builder separation: block building, relay selection, proposal, routing.

Builders pack blocks from their node's mempool view plus their private
channel, relays forward the best admissible bid, and the proposer signs the
highest offer unless its own local block pays more. ``miner_build_legacy``
covers the pre-separation single-miner world.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Mapping, NamedTuple, Optional, Sequence

from .amm import Pool, spot_price
from .core import (
    Block, BlockSimulator, Bundle, ChainState, GAS_ASSET, Transaction, gas_priority_key,
)
from .errors import NothingToPropose
from .fixed import TokenAmount
from .mempool import PrivateChannel
from .policy import ReputationLedger, tee_shuffle
from . import strategies

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BuilderProfile:
    id: str
    honest: bool = True
    self_dealing: bool = False
    censoring: bool = False
    colluding: bool = False
    coalition: str = ""
    latency_advantage: int = 0
    payment_fraction: Fraction = Fraction(9, 10)
    tee: bool = False
    accepts_private: bool = True
    node: str = ""
    attack_budget: TokenAmount = TokenAmount.of(100)

    def __post_init__(self):
        object.__setattr__(self, "payment_fraction", Fraction(self.payment_fraction))
        if self.honest and (self.self_dealing or self.censoring or self.colluding):
            raise ValueError(f"builder {self.id}: honest excludes the other policy flags")
        if self.colluding and not self.coalition:
            raise ValueError(f"builder {self.id}: colluding builders need a coalition id")
        if not 0 <= self.payment_fraction <= 1:
            raise ValueError(f"builder {self.id}: payment_fraction must be in [0, 1]")
        if self.latency_advantage < 0:
            raise ValueError(f"builder {self.id}: latency_advantage must be >= 0")


@dataclass(frozen=True)
class RelayProfile:
    id: str
    regulated: bool = False
    builders: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "builders", tuple(self.builders))


@dataclass
class InclusionStats:
    """Per-builder routed-order counters with a (included+1)/(received+2) rate."""

    received: dict[str, int] = field(default_factory=dict)
    included: dict[str, int] = field(default_factory=dict)

    def rate(self, builder: str) -> Fraction:
        return Fraction(self.included.get(builder, 0) + 1, self.received.get(builder, 0) + 2)

    def record_received(self, builder: str, n: int = 1) -> None:
        self.received[builder] = self.received.get(builder, 0) + n

    def record_included(self, builder: str, n: int = 1) -> None:
        inc = self.included.get(builder, 0) + n
        if inc > self.received.get(builder, 0):
            raise ValueError(f"builder {builder}: included would exceed received")
        self.included[builder] = inc


@dataclass(frozen=True)
class Bid:
    builder: str
    block: Block
    amount: TokenAmount
    profit: int = 0  # builder's realized block profit, micros of Y


def is_sanctioned(tx: Transaction, sanctions: Iterable[str]) -> bool:
    s = sanctions if isinstance(sanctions, (set, frozenset)) else set(sanctions)
    return tx.sender in s or (tx.recipient is not None and tx.recipient in s)


def channel_contents(channel: PrivateChannel) -> list[Bundle]:
    return [b for _, b in channel._queue]


def prune_channel(channel: PrivateChannel, keep: Callable[[int, Bundle], bool]) -> None:
    channel._queue = [(t, b) for t, b in channel._queue if keep(t, b)]


# -- building ------------------------------------------------------------------

class _Unit(NamedTuple):
    txs: tuple[Transaction, ...]
    atomic: bool
    price: Fraction  # gas cost per gas unit, exact
    first_id: int
    private_order: bool  # single user order from the private channel
    priority: int = 0  # higher packs first (coalition hand-offs)


def _unit_from_bundle(b: Bundle) -> _Unit:
    single_user = len(b.txs) == 1 and b.txs[0].sender == b.submitter
    price = Fraction(sum(t.gas_cost.micros for t in b.txs), b.gas_used)
    return _Unit(b.txs, True, price, b.txs[0].id, single_user)


MAX_CANDIDATES = 3  # private orders tried per block


@dataclass
class BuildResult:
    block: Block
    profit: int  # micros of Y, X holdings marked at post-block spot
    own_attacks: list[str] = field(default_factory=list)  # labels of builder-owned attack bundles
    colluded: bool = False
    honest_profit: int = 0
    collusive_profit: int = 0
    deferred: list[Transaction] = field(default_factory=list)  # back legs handed to the coalition
    skipped: list[int] = field(default_factory=list)


def _pack(state: ChainState, builder: str, units: Sequence[_Unit], gas_limit: int,
          tee_overhead: int) -> tuple[list[Transaction], list[tuple[int, int]], BlockSimulator, list[int]]:
    order = sorted(units, key=lambda u: (-u.priority, -u.price, u.first_id))
    sim = BlockSimulator(state, builder)
    payload: list[Transaction] = []
    spans: list[tuple[int, int]] = []
    gas = 0
    skipped: list[int] = []
    for u in order:
        g = sum(t.gas_used + tee_overhead for t in u.txs)
        if gas + g > gas_limit:
            skipped.extend(t.id for t in u.txs)
            continue
        if sim.try_add(u.txs, u.atomic) is None:
            skipped.extend(t.id for t in u.txs)
            continue
        if len(u.txs) > 1:
            spans.append((len(payload), len(payload) + len(u.txs)))
        payload.extend(u.txs)
        gas += g
    return payload, spans, sim, skipped


def _mark_value(sim_pools: Mapping[str, Pool], x_micros: int, mark_pool: Optional[str]) -> int:
    if not x_micros:
        return 0
    pid = mark_pool if mark_pool in sim_pools else min(sim_pools)
    price = spot_price(sim_pools[pid])
    return (x_micros * price.numerator) // price.denominator


def block_profit(state: ChainState, block: Block, builder: str, mark_pool: Optional[str] = None) -> int:
    """Builder's gain from executing ``block`` (bid excluded), X marked at post-block spot."""
    from .core import simulate_block
    pools, balances, _ = simulate_block(state, block)
    dy = balances.get((builder, GAS_ASSET), 0) - state.balance(builder, GAS_ASSET).micros
    dx = balances.get((builder, "X"), 0) - state.balance(builder, "X").micros
    return dy + _mark_value(pools, dx, mark_pool)


def _private_victims(state: ChainState, builder: str, units: Sequence[_Unit], gas_limit: int,
                     overhead: int, budget: TokenAmount) -> list[tuple[int, _Unit, Pool]]:
    """Private orders worth sandwiching, best first.

    Each order is sized against the pool as it will stand at the order's
    slot, i.e. after every unit that packs ahead of it.
    """
    order = sorted(units, key=lambda u: (-u.priority, -u.price, u.first_id))
    out = []
    for i, u in enumerate(order):
        if not u.private_order:
            continue
        intent = strategies._victim_intent(u.txs[0])
        if intent is None or intent.pool_id not in state.pools:
            continue
        _, _, sim, _ = _pack(state, builder, order[:i], gas_limit, overhead)
        pool = sim.pools[intent.pool_id]
        est = strategies.sandwich_estimate(pool, intent, budget)
        if est is None or est.profit_micros <= 0:
            continue
        out.append((strategies._to_y(est.profit_micros, intent.direction.asset_in, pool), u, pool))
    out.sort(key=lambda c: (-c[0], c[1].first_id))
    return out


def builder_build_block(
    view: Sequence[Transaction],
    private_bundles: Sequence[Bundle],
    profile: BuilderProfile,
    sanctions: Iterable[str],
    gas_limit: int,
    *,
    state: ChainState,
    height: Optional[int] = None,
    new_id: Optional[Callable[[], int]] = None,
    tee_rng: Optional[random.Random] = None,
    tee_overhead: int = 20,
    handoffs: Sequence[Transaction] = (),
    collusion_gate: Optional[Callable[[int, int], bool]] = None,
) -> BuildResult:
    """Assemble this builder's best block and report its profit.

    Units (lone public txs and private bundles) are packed by effective gas
    price, lower first id on ties, each checked by simulation; a bundle that
    would revert is left out. Self-dealing builders wrap their most
    lucrative private order in their own sandwich. Colluding builders may
    instead keep the front half and hand the back leg to a coalition
    partner's next block, if ``collusion_gate(h, c)`` agrees. TEE builders
    shuffle the packed payload and pay enclave gas on every tx.
    """
    height = state.height + 1 if height is None else height
    sanctions = set(sanctions)
    units = [_Unit((t,), False, Fraction(t.gas_price.micros), t.id, False) for t in view]
    units += [_unit_from_bundle(b) for b in private_bundles]
    units += [_Unit((t,), True, Fraction(t.gas_price.micros), t.id, False, priority=1) for t in handoffs]
    if profile.censoring:
        units = [u for u in units if not any(is_sanctioned(t, sanctions) for t in u.txs)]
    overhead = tee_overhead if profile.tee else 0
    result_extra: dict = {}

    if (profile.self_dealing or profile.colluding) and new_id is not None:
        candidates = _private_victims(state, profile.id, units, gas_limit, overhead, profile.attack_budget)
    else:
        candidates = []

    def finish(units_: Sequence[_Unit]):
        payload, spans, sim, skipped = _pack(state, profile.id, units_, gas_limit, overhead)
        if profile.tee:
            payload = tee_shuffle(payload, tee_rng or random.Random(0), overhead)
            spans = []
        block = Block(height, profile.id, tuple(payload), TokenAmount(0), gas_limit, "", tuple(spans))
        return block, skipped

    base_block, base_skipped = finish(units)
    mark_pool = None
    chosen_block, chosen_skipped = base_block, base_skipped
    own: list[str] = []
    colluded = False
    deferred: list[Transaction] = []
    h = c = 0

    for _, victim_unit, pool in candidates[:MAX_CANDIDATES]:
        victim = victim_unit.txs[0]
        cfg = strategies.SearcherConfig(profile.id, (pool.id,), budget=profile.attack_budget)
        sandwich = strategies.craft_sandwich(victim, pool, cfg, new_id, gas_price=victim.gas_price,
                                             label=f"{profile.id}:self:{victim.id}")
        others = [u for u in units if u is not victim_unit]
        if profile.self_dealing:
            su = _Unit(sandwich.txs, True, victim_unit.price, victim.id, False)
            blk, sk = finish(others + [su])
            if all(t.id in blk.tx_ids for t in sandwich.txs):
                chosen_block, chosen_skipped = blk, sk
                own.append(sandwich.txs[0].label)
                mark_pool = pool.id
        if profile.colluding and collusion_gate is not None:
            h = block_profit(state, chosen_block, profile.id, pool.id)
            front, _, back = sandwich.txs
            tag = f"{profile.id}:collude:{victim.id}"
            front = Transaction(front.id, front.sender, front.kind, front.payload, front.gas_price,
                                front.gas_used, front.origin_time, tag)
            back = Transaction(back.id, back.sender, back.kind, back.payload, back.gas_price,
                               back.gas_used, back.origin_time, tag)
            cu = _Unit((front, victim), True, victim_unit.price, victim.id, False)
            blk, sk = finish(others + [cu])
            if front.id in blk.tx_ids:
                c = block_profit(state, blk, profile.id, pool.id)
                if c > h and collusion_gate(h, c):
                    chosen_block, chosen_skipped = blk, sk
                    colluded = True
                    deferred = [back]
                    own = [tag]
                    mark_pool = pool.id
        if own:
            break

    profit = block_profit(state, chosen_block, profile.id, mark_pool)
    return BuildResult(chosen_block, profit, own, colluded, h, c, deferred, chosen_skipped)


def make_bid(result: BuildResult, profile: BuilderProfile) -> Bid:
    amount = (max(result.profit, 0) * profile.payment_fraction.numerator) // profile.payment_fraction.denominator
    block = Block(result.block.height, result.block.builder, result.block.payload, TokenAmount(amount),
                  result.block.gas_limit, "", result.block.bundles)
    return Bid(profile.id, block, TokenAmount(amount), result.profit)


# -- selection -----------------------------------------------------------------

def relay_select(bids: Sequence[Bid], relay: RelayProfile, sanctions: Iterable[str] = ()) -> Optional[Bid]:
    """Highest bid from a connected builder (lowest builder id on ties).

    Regulated relays first discard blocks carrying sanctioned txs.
    """
    sanctions = set(sanctions)
    pool = [b for b in bids if not relay.builders or b.builder in relay.builders]
    if relay.regulated:
        pool = [b for b in pool if not any(is_sanctioned(t, sanctions) for t in b.block.payload)]
    if not pool:
        return None
    return min(pool, key=lambda b: (-b.amount.micros, b.builder))


def proposer_select(relay_offers: Sequence[Bid], local_block: Optional[Block] = None,
                    local_profit: TokenAmount = TokenAmount(0)) -> Block:
    """Best relayed block, unless the proposer's own block earns strictly more."""
    best = min(relay_offers, key=lambda b: (-b.amount.micros, b.builder)) if relay_offers else None
    if best is None:
        if local_block is None:
            raise NothingToPropose("no relay offers and no local block")
        return local_block
    if local_block is not None and local_profit > best.amount:
        return local_block
    return best.block


def route_order_flow(user: str, stats: InclusionStats, mode: str, builders: Sequence[str], *,
                     rng: Optional[random.Random] = None, reputation: Optional[ReputationLedger] = None,
                     gamma: float = 1.0) -> str:
    """Pick the builder that receives a user's private order.

    ``rate`` takes the highest smoothed inclusion rate, ``uniform`` draws
    uniformly, ``reputation`` draws with weight score**gamma.
    """
    if not builders:
        raise ValueError("no active builders")
    ids = sorted(builders)
    if mode == "rate":
        return min(ids, key=lambda b: (-stats.rate(b), b))
    if rng is None:
        raise ValueError(f"routing mode {mode!r} needs a seeded generator")
    if mode == "uniform":
        return ids[rng.randrange(len(ids))]
    if mode == "reputation":
        rep = reputation or ReputationLedger()
        weights = [float(rep.score(b)) ** gamma for b in ids]
        if sum(weights) <= 0:
            return ids[rng.randrange(len(ids))]
        return rng.choices(ids, weights=weights, k=1)[0]
    raise ValueError(f"unknown routing mode {mode!r}")


def miner_build_legacy(view: Sequence[Transaction], mode: str, *, miner: str = "miner", height: int = 0,
                       gas_limit: int = 10_000) -> Block:
    """Pre-separation block: arrival order (``naive``) or gas-price order (``greedy``).

    ``view`` must already be in arrival order, as ``Mempool.node_view`` returns it.
    """
    if mode == "naive":
        ordered = list(view)
    elif mode == "greedy":
        ordered = sorted(view, key=gas_priority_key)
    else:
        raise ValueError(f"unknown legacy mode {mode!r}")
    payload: list[Transaction] = []
    gas = 0
    for t in ordered:
        if gas + t.gas_used > gas_limit:
            continue
        payload.append(t)
        gas += t.gas_used
    return Block(height, miner, tuple(payload), TokenAmount(0), gas_limit, "")
