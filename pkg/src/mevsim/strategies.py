"""Searcher bots: opportunity scanning and attack construction.

Everything here is a pure function of a view snapshot, pool states and the
searcher's config. Profit estimates are computed with the same AMM code the
chain executes, so an attack run alone on the snapshot realizes exactly its
estimate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Callable, Mapping, NamedTuple, Optional, Sequence

from . import amm
from .amm import Direction, Pool
from .core import ArbIntent, Bundle, SwapIntent, Transaction, TxKind, GAS_USED
from .errors import BudgetExceeded, NoProfit, NoProfitableSize
from .fixed import TokenAmount

logger = logging.getLogger(__name__)



class Strategy(str, Enum):
    FRONT_RUN_COPY = "FrontRunCopy"
    SANDWICH = "Sandwich"
    BACK_RUN = "BackRun"
    CROSS_POOL_ARB = "CrossPoolArb"


@dataclass(frozen=True)
class SearcherConfig:
    id: str
    watched_pools: tuple[str, ...]
    strategies: frozenset = frozenset({Strategy.SANDWICH})
    gas_bump: TokenAmount = TokenAmount(1)
    max_escalations: int = 10
    budget: TokenAmount = TokenAmount.of(100)
    node: str = ""
    spam_copies: int = 0
    bid_fraction: Fraction = Fraction(1)

    def __post_init__(self):
        object.__setattr__(self, "watched_pools", tuple(self.watched_pools))
        object.__setattr__(self, "strategies", frozenset(Strategy(s) for s in self.strategies))
        if self.gas_bump.micros <= 0:
            raise ValueError(f"searcher {self.id}: gas_bump must be positive")
        if self.max_escalations < 0:
            raise ValueError(f"searcher {self.id}: max_escalations must be >= 0")
        if self.spam_copies < 0:
            raise ValueError(f"searcher {self.id}: spam_copies must be >= 0")


@dataclass(frozen=True)
class Opportunity:
    kind: Strategy
    victim_tx: Optional[int]
    pools: tuple[str, ...]
    estimated_profit: TokenAmount  # gross, denominated in ``asset``
    asset: str = "Y"
    size: TokenAmount = TokenAmount(0)
    value_y: int = 0  # estimated_profit converted to Y micros, used for ranking
    gas_cost: int = 0  # micros of Y at the minimum gas bid

    def sort_key(self):
        return (-self.value_y, -1 if self.victim_tx is None else self.victim_tx, self.kind.value, self.pools)


# -- helpers -------------------------------------------------------------------

def _to_y(amount_micros: int, asset: str, pool: Pool) -> int:
    if asset == "Y":
        return amount_micros
    return amount_micros * pool.reserve_y.micros // pool.reserve_x.micros


def _argmax_concave(f: Callable[[int], int], lo: int, hi: int) -> int:
    """Integer ternary search for the peak of a concave profit curve.

    Near the peak the floored curve is flat to within a few micros, so a
    slope test would drift; comparing the quarter points instead only
    errs when both sit within rounding noise of each other, and then the
    peak lies near the middle, which both branches keep.
    """
    a, b = lo, hi
    while b - a > 8:
        q1 = a + (b - a) // 4
        q3 = b - (b - a) // 4
        if f(q1) < f(q3):
            a = q1
        else:
            b = q3
    return max(range(a, b + 1), key=lambda v: (f(v), -v))


def _victim_intent(tx: Transaction) -> Optional[SwapIntent]:
    if tx.kind is TxKind.SWAP and isinstance(tx.payload, SwapIntent):
        return tx.payload
    return None


# -- arbitrage between two pools ---------------------------------------------

class ArbPlan(NamedTuple):
    buy_pool: str
    sell_pool: str
    amount_in: TokenAmount
    x_out: TokenAmount
    y_out: TokenAmount

    @property
    def profit_micros(self) -> int:
        return self.y_out.micros - self.amount_in.micros


def _round_trip_profit(buy: Pool, sell: Pool, a: int) -> int:
    if a <= 0:
        return 0
    _, y, _, _ = amm.two_pool_round_trip(buy, sell, TokenAmount(a))
    return y.micros - a


def plan_arbitrage(pool_a: Pool, pool_b: Pool, budget: TokenAmount) -> Optional[ArbPlan]:
    """Best Y -> X -> Y round trip across two pools, or None when unprofitable.

    Buys X where it is cheaper. The size is the profit-maximizing input found
    by bisection, searched only up to the point where the two spot prices
    would cross and capped by ``budget``.
    """
    if budget.micros <= 0:
        return None
    sa, sb = amm.spot_price(pool_a), amm.spot_price(pool_b)
    if sa == sb:
        return None
    buy, sell = (pool_a, pool_b) if sa < sb else (pool_b, pool_a)

    def crossed(a: int) -> bool:
        b2, x = amm.apply_swap(buy, Direction.Y_FOR_X, TokenAmount(a))
        s2, _ = amm.apply_swap(sell, Direction.X_FOR_Y, x) if x.micros else (sell, None)
        return amm.spot_price(b2) > amm.spot_price(s2)

    hi = budget.micros
    if crossed(hi):
        lo_ok, bad = 0, hi
        for _ in range(amm.MAX_BISECTION_STEPS):
            if bad - lo_ok <= 1:
                break
            m = (lo_ok + bad) // 2
            if crossed(m):
                bad = m
            else:
                lo_ok = m
        hi = max(lo_ok, 1)
    best = _argmax_concave(lambda a: _round_trip_profit(buy, sell, a), 1, hi)
    x, y, _, _ = amm.two_pool_round_trip(buy, sell, TokenAmount(best))
    if y.micros - best <= 0:
        return None
    return ArbPlan(buy.id, sell.id, TokenAmount(best), x, y)


def cross_pool_arbitrage(
    pool_a: Pool,
    pool_b: Pool,
    budget: TokenAmount,
    *,
    sender: str = "",
    new_id: Optional[Callable[[], int]] = None,
    gas_price: TokenAmount = TokenAmount(0),
    origin_time: int = 0,
) -> Optional[tuple[Transaction, Transaction]]:
    """(buy on cheaper pool, sell on dearer pool) or None.

    The sell leg is guarded with min_out = amount spent, so it never
    realizes a loss.
    """
    plan = plan_arbitrage(pool_a, pool_b, budget)
    if plan is None:
        return None
    new_id = new_id or _counter()
    label = f"{sender}:arb"
    buy = Transaction(new_id(), sender, TxKind.SWAP,
                      SwapIntent(plan.buy_pool, Direction.Y_FOR_X, plan.amount_in, plan.x_out),
                      gas_price, origin_time=origin_time, label=label)
    sell = Transaction(new_id(), sender, TxKind.SWAP,
                       SwapIntent(plan.sell_pool, Direction.X_FOR_Y, plan.x_out, plan.amount_in),
                       gas_price, origin_time=origin_time, label=label)
    return buy, sell


def _counter():
    n = [0]

    def nxt():
        n[0] += 1
        return n[0]
    return nxt


# -- scanning ------------------------------------------------------------------

def sandwich_estimate(pool: Pool, victim: SwapIntent, budget: TokenAmount) -> Optional[amm.SandwichOutcome]:
    size = amm.optimal_frontrun_size(pool, victim, budget)
    if size.micros == 0:
        return None
    return amm.simulate_sandwich(pool, victim, size)


def _frontrun_copy_estimate(pool: Pool, victim: SwapIntent) -> int:
    """Mark-to-market gain of copying the victim's swap ahead of it, in its input asset."""
    d = victim.direction
    p, got = amm.apply_swap(pool, d, victim.amount_in)
    p, _ = amm.apply_swap(p, d, victim.amount_in)
    # value the acquired output at the post-victim spot, in input-asset terms
    if d is Direction.Y_FOR_X:
        worth = got.micros * p.reserve_y.micros // p.reserve_x.micros
    else:
        worth = got.micros * p.reserve_x.micros // p.reserve_y.micros
    return worth - victim.amount_in.micros


def best_backrun(target: Transaction, pools: Mapping[str, Pool], watched: Sequence[str],
                 budget: TokenAmount) -> Optional[ArbPlan]:
    intent = _victim_intent(target)
    if intent is None or intent.pool_id not in pools:
        return None
    moved_pool, out = amm.apply_swap(pools[intent.pool_id], intent.direction, intent.amount_in)
    if out.micros < intent.min_out.micros:
        return None  # target would revert, nothing moves
    best: Optional[ArbPlan] = None
    for pid in watched:
        if pid == intent.pool_id or pid not in pools:
            continue
        plan = plan_arbitrage(moved_pool, pools[pid], budget)
        if plan is not None and (best is None or plan.profit_micros > best.profit_micros):
            best = plan
    return best


def scan_opportunities(view: Sequence[Transaction], pools: Mapping[str, Pool],
                       config: SearcherConfig) -> list[Opportunity]:
    """Rank every attack the searcher could mount on its current snapshot."""
    watched = [p for p in config.watched_pools if p in pools]
    opps: list[Opportunity] = []
    for tx in view:
        intent = _victim_intent(tx)
        if intent is None or tx.sender == config.id or intent.pool_id not in watched:
            continue
        pool = pools[intent.pool_id]
        bid_gp = tx.gas_price.micros + config.gas_bump.micros
        asset = intent.direction.asset_in
        per_victim: list[Opportunity] = []
        if Strategy.SANDWICH in config.strategies:
            est = sandwich_estimate(pool, intent, config.budget)
            if est is not None and est.profit_micros > 0:
                gas = 2 * GAS_USED[TxKind.SWAP] * bid_gp
                value = _to_y(est.profit_micros, asset, pool)
                if value > gas:
                    per_victim.append(Opportunity(Strategy.SANDWICH, tx.id, (pool.id,),
                                                  TokenAmount(est.profit_micros), asset,
                                                  est.front_in, value, gas))
        if Strategy.FRONT_RUN_COPY in config.strategies and intent.amount_in <= config.budget:
            gain = _frontrun_copy_estimate(pool, intent)
            gas = GAS_USED[TxKind.SWAP] * bid_gp * max(1, config.spam_copies)
            value = _to_y(gain, asset, pool)
            if gain > 0 and value > gas:
                per_victim.append(Opportunity(Strategy.FRONT_RUN_COPY, tx.id, (pool.id,),
                                              TokenAmount(gain), asset, intent.amount_in, value, gas))
        if per_victim:
            opps.append(max(per_victim, key=lambda o: (o.value_y, o.kind.value)))
        if Strategy.BACK_RUN in config.strategies:
            plan = best_backrun(tx, pools, watched, config.budget)
            gas = GAS_USED[TxKind.SWAP] * max(0, tx.gas_price.micros - 1)
            if plan is not None and plan.profit_micros > gas:
                opps.append(Opportunity(Strategy.BACK_RUN, tx.id, (plan.buy_pool, plan.sell_pool),
                                        TokenAmount(plan.profit_micros), "Y", plan.amount_in,
                                        plan.profit_micros, gas))
    if Strategy.CROSS_POOL_ARB in config.strategies:
        for i, a in enumerate(watched):
            for b in watched[i + 1:]:
                plan = plan_arbitrage(pools[a], pools[b], config.budget)
                gas = 2 * GAS_USED[TxKind.SWAP] * config.gas_bump.micros
                if plan is not None and plan.profit_micros > gas:
                    opps.append(Opportunity(Strategy.CROSS_POOL_ARB, None, (plan.buy_pool, plan.sell_pool),
                                            TokenAmount(plan.profit_micros), "Y", plan.amount_in,
                                            plan.profit_micros, gas))
    opps.sort(key=Opportunity.sort_key)
    return opps


# -- crafting ------------------------------------------------------------------

def craft_frontrun_copy(victim: Transaction, config: SearcherConfig, new_id: Callable[[], int],
                        gas_price: Optional[TokenAmount] = None, origin_time: int = 0,
                        label: str = "") -> Transaction:
    intent = _victim_intent(victim)
    if intent is None:
        raise ValueError(f"tx {victim.id} is not a swap; nothing to copy")
    if intent.amount_in > config.budget:
        raise BudgetExceeded(f"{config.id}: copy of tx {victim.id} needs {intent.amount_in}")
    gp = gas_price if gas_price is not None else victim.gas_price + config.gas_bump
    return Transaction(new_id(), config.id, TxKind.SWAP, intent, gp, origin_time=origin_time,
                       label=label or f"{config.id}:copy:{victim.id}")


def craft_sandwich(victim: Transaction, pool: Pool, config: SearcherConfig, new_id: Callable[[], int],
                   gas_price: Optional[TokenAmount] = None, origin_time: int = 0,
                   sender: Optional[str] = None, label: str = "") -> Bundle:
    """[front buy, victim, back sell of exactly the front's proceeds].

    The front leg reverts if it would fill worse than on the snapshot and
    the back leg reverts on a loss, so a stale bundle fails as a whole.
    """
    intent = _victim_intent(victim)
    if intent is None:
        raise ValueError(f"tx {victim.id} is not a swap")
    est = sandwich_estimate(pool, intent, config.budget)
    if est is None or est.profit_micros <= 0:
        raise NoProfitableSize(f"no profitable front-run for tx {victim.id}")
    who = sender or config.id
    gp = gas_price if gas_price is not None else victim.gas_price + config.gas_bump
    tag = label or f"{who}:sandwich:{victim.id}"
    d = intent.direction
    front = Transaction(new_id(), who, TxKind.SWAP, SwapIntent(pool.id, d, est.front_in, est.front_out),
                        gp, origin_time=origin_time, label=tag)
    back = Transaction(new_id(), who, TxKind.SWAP, SwapIntent(pool.id, d.opposite, est.front_out, est.front_in),
                       gp, origin_time=origin_time, label=tag)
    return Bundle((front, victim, back), who)


def craft_backrun(target: Transaction, pool: Pool, config: SearcherConfig, new_id: Callable[[], int],
                  reference: Mapping[str, Pool], origin_time: int = 0) -> Transaction:
    """Arbitrage tx placed right after ``target`` between its pool and a reference pool."""
    intent = _victim_intent(target)
    if intent is None:
        raise NoProfit(f"tx {target.id} has no price impact")
    pools = dict(reference)
    pools[pool.id] = pool
    watched = [p for p in pools if p in config.watched_pools or p == pool.id]
    plan = best_backrun(target, pools, watched, config.budget)
    if plan is None or plan.profit_micros <= 0:
        raise NoProfit(f"no back-run profit after tx {target.id}")
    gp = TokenAmount(max(0, target.gas_price.micros - 1))
    return Transaction(new_id(), config.id, TxKind.SWAP,
                       ArbIntent(plan.buy_pool, plan.sell_pool, plan.amount_in, plan.amount_in),
                       gp, origin_time=origin_time, label=f"{config.id}:backrun:{target.id}")


# -- priority gas auctions -----------------------------------------------------

def gas_auction_response(rival_bid: TokenAmount, own_valuation: TokenAmount,
                         config: SearcherConfig) -> Optional[TokenAmount]:
    """Outbid by one bump if still within valuation; None means withdraw."""
    nxt = rival_bid + config.gas_bump
    return nxt if nxt <= own_valuation else None


@dataclass
class AuctionResult:
    winner: Optional[str]
    final_bids: dict[str, TokenAmount] = field(default_factory=dict)
    history: list[tuple[str, TokenAmount]] = field(default_factory=list)
    responses: dict[str, int] = field(default_factory=dict)


def run_gas_auction(bidders: Sequence[tuple[SearcherConfig, TokenAmount]], floor_bid: TokenAmount) -> AuctionResult:
    """Escalating gas war among bots chasing the same victim.

    Bots respond in id order to the standing high bid until every non-leader
    has withdrawn or exhausted its escalations. Every bid placed is kept in
    ``history``; in public-mempool mode each one becomes a broadcast tx.
    """
    order = sorted(bidders, key=lambda b: b[0].id)
    res = AuctionResult(None, {}, [], {c.id: 0 for c, _ in order})
    active = {c.id for c, _ in order}
    high = floor_bid
    leader: Optional[str] = None
    progressed = True
    while progressed:
        progressed = False
        for cfg, val in order:
            if cfg.id not in active or cfg.id == leader:
                continue
            if res.responses[cfg.id] > cfg.max_escalations:
                active.discard(cfg.id)
                continue
            res.responses[cfg.id] += 1
            bid = gas_auction_response(high, val, cfg)
            if bid is None:
                active.discard(cfg.id)
                continue
            high, leader = bid, cfg.id
            res.final_bids[cfg.id] = bid
            res.history.append((cfg.id, bid))
            progressed = True
    res.winner = leader
    return res
