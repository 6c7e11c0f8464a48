import pytest

from mevsim.core import Bundle
from mevsim.errors import BuilderRejectsPrivateFlow, UnknownNode
from mevsim.mempool import Mempool, NetworkTopology
from mevsim.pbs import channel_contents

from conftest import swap_tx


def topo():
    return NetworkTopology(("a", "b", "c"), {("a", "b"): 1, ("a", "c"): 3}, default_latency=2)


def test_latency_is_symmetric_with_default():
    t = topo()
    assert t.lat("b", "a") == 1
    assert t.lat("b", "c") == 2
    assert t.lat("c", "c") == 0
    assert t.max_latency == 3


def test_views_differ_until_propagation_completes():
    mp = Mempool(topo())
    mp.broadcast_tx(swap_tx(1, "u", 1), "a", tick=0)
    assert [t.id for t in mp.node_view("a", 0)] == [1]
    assert mp.node_view("c", 2) == []
    assert [t.id for t in mp.node_view("c", 3)] == [1]


def test_view_order_is_arrival_then_id():
    mp = Mempool(topo())
    mp.broadcast_tx(swap_tx(5, "u", 1), "c", tick=0)
    mp.broadcast_tx(swap_tx(2, "u", 1), "a", tick=1)
    assert [t.id for t in mp.node_view("a", 5)] == [2, 5]


def test_remove_forgets_everywhere():
    mp = Mempool(topo())
    mp.broadcast_tx(swap_tx(1, "u", 1), "a", 0)
    mp.remove([1])
    assert mp.node_view("b", 10) == [] and mp.pending_ids() == set()


def test_unknown_nodes_raise():
    with pytest.raises(UnknownNode):
        NetworkTopology(("a",), {("a", "z"): 1})
    mp = Mempool(topo())
    with pytest.raises(UnknownNode):
        mp.broadcast_tx(swap_tx(1, "u", 1), "z", 0)
    with pytest.raises(UnknownNode):
        mp.node_view("z", 0)


def test_bad_latency_values():
    with pytest.raises(ValueError):
        NetworkTopology(("a", "b"), {("a", "b"): -1})
    with pytest.raises(ValueError):
        NetworkTopology(("a", "a"))


def test_private_bundles_stay_out_of_public_views():
    mp = Mempool(topo())
    mp.register_builder("B1")
    mp.register_builder("B2", accepts_private=False)
    r = mp.submit_private_bundle(Bundle((swap_tx(9, "u", 1),), "u"), "B1", tick=2)
    assert r.tx_ids == (9,)
    assert all(mp.node_view(n, 99) == [] for n in ("a", "b", "c"))
    assert [b.ids for b in channel_contents(mp.channel("B1"))] == [(9,)]
    with pytest.raises(BuilderRejectsPrivateFlow):
        mp.submit_private_bundle(Bundle((swap_tx(10, "u", 1),), "u"), "B2")
