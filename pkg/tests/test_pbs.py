import random
from fractions import Fraction

import pytest

from mevsim.core import Block, Bundle, ChainState, Transaction, TransferIntent, TxKind
from mevsim.errors import NothingToPropose
from mevsim.fixed import TokenAmount, amt
from mevsim.pbs import (
    Bid, BuilderProfile, InclusionStats, RelayProfile, builder_build_block, make_bid, miner_build_legacy,
    proposer_select, relay_select, route_order_flow,
)
from mevsim.policy import ReputationLedger, collusion_decision, RegulatoryRegime, Decision

from conftest import pool, swap_tx


def genesis(**extra):
    bal = {("u", "Y"): amt(10_000), ("v", "Y"): amt(10_000), ("B1", "Y"): amt(1_000), ("B1", "X"): amt(1_000)}
    bal.update(extra)
    return ChainState.genesis([pool()], bal)


def sanctioned_tx(tx_id, gp="0.005"):
    return Transaction(tx_id, "u", TxKind.TRANSFER, TransferIntent("mixer", "Y", amt(1)), amt(gp))


def build(view=(), private=(), profile=None, sanctions=(), **kw):
    profile = profile or BuilderProfile("B1")
    return builder_build_block(list(view), list(private), profile, sanctions, 10_000, state=genesis(), **kw)


def test_profile_flags_validated():
    with pytest.raises(ValueError):
        BuilderProfile("B", honest=True, censoring=True)
    with pytest.raises(ValueError):
        BuilderProfile("B", honest=False, colluding=True)
    with pytest.raises(ValueError):
        BuilderProfile("B", payment_fraction=Fraction(3, 2))


def test_honest_builder_orders_by_gas_price_and_collects_fees():
    view = [swap_tx(1, "u", 5, gp="0.001"), swap_tx(2, "v", 5, gp="0.003")]
    res = build(view)
    assert res.block.tx_ids == (2, 1)
    assert res.profit == 100 * (1_000 + 3_000)
    assert res.own_attacks == []


def test_private_bundle_kept_intact():
    b = Bundle((swap_tx(5, "u", 5, gp="0.002"), swap_tx(6, "u", 5, gp="0.002")), "u")
    res = build([swap_tx(1, "v", 5, gp="0.001")], [b])
    assert res.block.tx_ids == (5, 6, 1)
    assert res.block.bundles == ((0, 2),)


def test_reverting_bundle_left_out():
    bad = Bundle((swap_tx(5, "u", 5, min_out="100", gp="0.009"),), "u")
    res = build([swap_tx(1, "v", 5, gp="0.001")], [bad])
    assert res.block.tx_ids == (1,)
    assert 5 in res.skipped


def test_censoring_builder_drops_sanctioned():
    prof = BuilderProfile("B1", honest=False, censoring=True)
    res = build([sanctioned_tx(1), swap_tx(2, "v", 5, gp="0.001")], profile=prof, sanctions={"mixer"})
    assert res.block.tx_ids == (2,)
    honest = build([sanctioned_tx(1), swap_tx(2, "v", 5, gp="0.001")], sanctions={"mixer"})
    assert 1 in honest.block.tx_ids


def test_self_dealing_builder_sandwiches_private_order(new_id):
    prof = BuilderProfile("B1", honest=False, self_dealing=True, attack_budget=amt(100))
    victim = Bundle((swap_tx(1, "u", 100, gp="0.001"),), "u")
    res = build(private=[victim], profile=prof, new_id=new_id)
    assert len(res.block.payload) == 3 and res.block.payload[1].id == 1
    assert res.own_attacks == ["B1:self:1"]
    honest = build(private=[victim], new_id=new_id)
    assert res.profit > honest.profit


def test_self_dealer_sizes_against_pool_at_victim_slot(new_id):
    # a pricier order packs first and eats most of the victim's slippage room
    prof = BuilderProfile("B1", honest=False, self_dealing=True, attack_budget=amt(50))
    ahead = Bundle((swap_tx(3, "v", 16, min_out="15.748031", gp="0.002"),), "v")
    victim = Bundle((swap_tx(1, "u", 28, min_out="26", gp="0.001"),), "u")
    res = build(private=[ahead, victim], profile=prof, new_id=new_id)
    assert res.own_attacks == ["B1:self:1"]
    assert 1 in res.block.tx_ids and 3 in res.block.tx_ids


def test_colluding_builder_defers_back_leg(new_id):
    prof = BuilderProfile("B1", honest=False, colluding=True, coalition="K", attack_budget=amt(100))
    victim = Bundle((swap_tx(1, "u", 100, gp="0.001"),), "u")
    regime = RegulatoryRegime(True, Fraction(1, 2), amt(0))
    gate = lambda h, c: collusion_decision(h, c, regime)[0] is Decision.COLLUDE
    res = build(private=[victim], profile=prof, new_id=new_id, collusion_gate=gate)
    assert res.colluded and res.collusive_profit > res.honest_profit
    assert len(res.block.payload) == 2 and len(res.deferred) == 1
    deterred = build(private=[victim], profile=prof, new_id=new_id, collusion_gate=lambda h, c: False)
    assert not deterred.colluded and deterred.deferred == []


def test_tee_builder_shuffles_and_pays_overhead():
    prof = BuilderProfile("B1", tee=True)
    view = [swap_tx(i, "u", 1, gp=f"0.00{i}") for i in range(1, 7)]
    res = build(view, profile=prof, tee_rng=random.Random(3))
    assert sorted(res.block.tx_ids) == [1, 2, 3, 4, 5, 6]
    assert all(t.gas_used == 120 for t in res.block.payload)
    assert res.block.bundles == ()


def test_make_bid_pays_fraction_of_profit():
    res = build([swap_tx(1, "u", 5, gp="0.01")])
    bid = make_bid(res, BuilderProfile("B1", payment_fraction=Fraction(9, 10)))
    assert bid.amount == amt("0.9") and bid.block.bid == amt("0.9")


def _bid(builder, amount, payload=()):
    return Bid(builder, Block(1, builder, tuple(payload), amt(amount), 10_000), amt(amount))


def test_relay_select_highest_connected_and_regulated_filter():
    bids = [_bid("B1", 3), _bid("B2", 5, [sanctioned_tx(9)]), _bid("B3", 5)]
    assert relay_select(bids, RelayProfile("R")).builder == "B2"
    assert relay_select(bids, RelayProfile("R", regulated=True), {"mixer"}).builder == "B3"
    assert relay_select(bids, RelayProfile("R", builders=("B1",))).builder == "B1"
    assert relay_select([], RelayProfile("R")) is None


def test_proposer_select():
    offers = [_bid("B1", 2), _bid("B2", 4)]
    local = Block(1, "V", (), TokenAmount(0), 10_000)
    assert proposer_select(offers).builder == "B2"
    assert proposer_select(offers, local, amt(5)) is local
    assert proposer_select(offers, local, amt(4)).builder == "B2"
    assert proposer_select([], local) is local
    with pytest.raises(NothingToPropose):
        proposer_select([])


def test_inclusion_stats_rate_and_guard():
    s = InclusionStats()
    assert s.rate("B") == Fraction(1, 2)
    s.record_received("B", 3)
    s.record_included("B", 3)
    assert s.rate("B") == Fraction(4, 5)
    with pytest.raises(ValueError):
        s.record_included("B")


def test_routing_modes():
    s = InclusionStats({"B1": 4, "B2": 4}, {"B1": 1, "B2": 3})
    assert route_order_flow("u", s, "rate", ["B1", "B2"]) == "B2"
    rng = random.Random(1)
    picks = {route_order_flow("u", s, "uniform", ["B1", "B2"], rng=rng) for _ in range(50)}
    assert picks == {"B1", "B2"}
    rep = ReputationLedger({"B1": 10}, {"B2": 0})
    rep.reports["B2"] = 0
    draws = [route_order_flow("u", s, "reputation", ["B1", "B2"], rng=rng, reputation=rep, gamma=4)
             for _ in range(400)]
    assert draws.count("B1") > draws.count("B2")
    with pytest.raises(ValueError):
        route_order_flow("u", s, "uniform", ["B1"])
    with pytest.raises(ValueError):
        route_order_flow("u", s, "rate", [])


def test_legacy_miner_orders():
    view = [swap_tx(1, "u", 1, gp="0.001"), swap_tx(2, "u", 1, gp="0.003")]
    assert miner_build_legacy(view, "naive").tx_ids == (1, 2)
    assert miner_build_legacy(view, "greedy").tx_ids == (2, 1)
    assert miner_build_legacy(view, "greedy", gas_limit=150).tx_ids == (2,)
    with pytest.raises(ValueError):
        miner_build_legacy(view, "fancy")
