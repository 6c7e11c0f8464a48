import math

import pytest
from hypothesis import given, settings, strategies as st

from mevsim.amm import Direction, Pool
from mevsim.core import ArbIntent
from mevsim.errors import BudgetExceeded, NoProfit, NoProfitableSize
from mevsim.fixed import TokenAmount, amt
from mevsim.strategies import (
    SearcherConfig, Strategy, craft_backrun, craft_frontrun_copy, craft_sandwich, cross_pool_arbitrage,
    gas_auction_response, plan_arbitrage, run_gas_auction, scan_opportunities,
)

from conftest import pool, swap_tx


def cfg(sid="S1", strategies=(Strategy.SANDWICH,), budget="100", **kw):
    return SearcherConfig(sid, ("P1", "P2"), frozenset(strategies), budget=amt(budget), **kw)


def arb_oracle_profit(buy: Pool, sell: Pool) -> float:
    xa, ya = buy.reserve_x.micros, buy.reserve_y.micros
    xb, yb = sell.reserve_x.micros, sell.reserve_y.micros
    r0 = ya * xb / (xa + xb)
    r1 = yb * xa / (xa + xb)
    a = math.sqrt(r0 * r1) - r0
    return r1 * a / (r0 + a) - a


def test_scan_ranks_sandwich_on_canonical_victim():
    victim = swap_tx(1, "u", 100)
    opps = scan_opportunities([victim], {"P1": pool()}, cfg())
    assert len(opps) == 1
    o = opps[0]
    assert o.kind is Strategy.SANDWICH and o.victim_tx == 1
    assert o.size == amt(100) and o.estimated_profit == amt("18.032785")


def test_scan_skips_own_and_unwatched_txs():
    assert scan_opportunities([swap_tx(1, "S1", 100)], {"P1": pool()}, cfg()) == []
    other = swap_tx(2, "u", 100, pid="P9")
    assert scan_opportunities([other], {"P9": pool(pid="P9")}, cfg()) == []


def test_craft_sandwich_shape(new_id):
    b = craft_sandwich(swap_tx(1, "u", 100), pool(), cfg(), new_id)
    front, victim, back = b.txs
    assert victim.id == 1 and b.submitter == "S1"
    assert front.payload.amount_in == amt(100) and front.payload.direction is Direction.Y_FOR_X
    assert back.payload.amount_in == front.payload.min_out == amt("90.909090")
    assert back.payload.min_out == amt(100)
    assert front.label == back.label == "S1:sandwich:1"


def test_craft_sandwich_without_room_raises(new_id):
    tight = swap_tx(1, "u", 100, min_out="90.909091")
    with pytest.raises(NoProfitableSize):
        craft_sandwich(tight, pool(), cfg(), new_id)


def test_frontrun_copy(new_id):
    tx = craft_frontrun_copy(swap_tx(1, "u", 10, gp="0.001"), cfg(gas_bump=amt("0.0001")), new_id)
    assert tx.payload.amount_in == amt(10) and tx.gas_price == amt("0.0011")
    with pytest.raises(BudgetExceeded):
        craft_frontrun_copy(swap_tx(2, "u", 500), cfg(), new_id)


def test_arbitrage_matches_closed_form():
    a, b = pool("1000", "1200", pid="P1"), pool("1000", "1000", pid="P2")
    plan = plan_arbitrage(a, b, amt(1000))
    assert plan.buy_pool == "P2" and plan.sell_pool == "P1"
    assert plan.profit_micros == pytest.approx(arb_oracle_profit(b, a), abs=50)


@settings(max_examples=150)
@given(st.integers(10**8, 10**10), st.integers(10**8, 10**10), st.integers(10**8, 10**10),
       st.integers(10**8, 10**10))
def test_arbitrage_near_oracle_optimum(xa, ya, xb, yb):
    a = Pool("P1", TokenAmount(xa), TokenAmount(ya))
    b = Pool("P2", TokenAmount(xb), TokenAmount(yb))
    plan = plan_arbitrage(a, b, TokenAmount(10**13))
    buy, sell = (a, b) if ya * xb < yb * xa else (b, a)
    best = arb_oracle_profit(buy, sell) if ya * xb != yb * xa else 0.0
    if plan is None:
        assert best < 200
    else:
        assert plan.profit_micros > 0
        assert plan.profit_micros <= best + 2
        assert plan.profit_micros >= best - max(200, best * 1e-6)


def test_no_arbitrage_when_prices_equal():
    assert plan_arbitrage(pool(pid="P1"), pool("500", "500", pid="P2"), amt(100)) is None
    assert cross_pool_arbitrage(pool(pid="P1"), pool(pid="P2"), amt(100)) is None


def test_cross_pool_arbitrage_legs(new_id):
    legs = cross_pool_arbitrage(pool("1000", "1200", pid="P1"), pool(pid="P2"), amt(100), sender="S", new_id=new_id)
    buy, sell = legs
    assert buy.payload.pool_id == "P2" and sell.payload.pool_id == "P1"
    assert sell.payload.min_out == buy.payload.amount_in


def test_backrun_after_price_moving_tx(new_id):
    target = swap_tx(1, "u", 100, gp="0.002")
    c = SearcherConfig("S1", ("P1", "P2"), frozenset({Strategy.BACK_RUN}), budget=amt(500))
    tx = craft_backrun(target, pool(), c, new_id, {"P2": pool(pid="P2")})
    assert isinstance(tx.payload, ArbIntent)
    assert tx.payload.buy_pool == "P2" and tx.payload.sell_pool == "P1"
    assert tx.gas_price.micros == target.gas_price.micros - 1
    with pytest.raises(NoProfit):
        craft_backrun(target, pool(), c, new_id, {})


def test_gas_auction_response():
    c = cfg(gas_bump=amt("0.1"))
    assert gas_auction_response(amt(1), amt(2), c) == amt("1.1")
    assert gas_auction_response(amt(2), amt(2), c) is None


def test_gas_auction_highest_valuation_wins_near_rival_cap():
    a = cfg("A", gas_bump=amt("0.1"), max_escalations=100)
    b = cfg("B", gas_bump=amt("0.1"), max_escalations=100)
    res = run_gas_auction([(a, amt(5)), (b, amt(3))], amt(1))
    assert res.winner == "A"
    assert amt(3) <= res.final_bids["A"] <= amt("3.1")
    assert len(res.history) > 2


def test_gas_auction_escalation_cap():
    a = cfg("A", gas_bump=amt("0.1"), max_escalations=1)
    b = cfg("B", gas_bump=amt("0.1"), max_escalations=50)
    assert run_gas_auction([(a, amt(50)), (b, amt(3))], amt(1)).winner == "B"


def test_gas_auction_single_bidder_and_nobody():
    a = cfg("A", gas_bump=amt("0.1"))
    assert run_gas_auction([(a, amt(5))], amt(1)).final_bids == {"A": amt("1.1")}
    assert run_gas_auction([(a, amt(1))], amt(1)).winner is None
