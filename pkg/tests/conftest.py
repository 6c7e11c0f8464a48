import itertools
from pathlib import Path

import pytest

from mevsim.amm import Direction, Pool
from mevsim.core import SwapIntent, Transaction, TxKind
from mevsim.fixed import amt

SCENARIO_DIR = Path(__file__).resolve().parents[1] / "src" / "mevsim" / "scenarios"


def pool(x="1000", y="1000", fee=0, pid="P1"):
    return Pool(pid, amt(x), amt(y), fee)


def swap_tx(tx_id, sender, amount, direction=Direction.Y_FOR_X, min_out="0", gp="0", pid="P1", label=""):
    return Transaction(tx_id, sender, TxKind.SWAP, SwapIntent(pid, direction, amt(amount), amt(min_out)),
                       amt(gp), label=label)


@pytest.fixture
def new_id():
    counter = itertools.count(1_000)
    return lambda: next(counter)
