"""Run metrics: value classification, concentration, censorship and accounting.

Extracted value is split three ways. Profits of attacks run by block
builders on flow they control count as Monarch; profits of searchers
preying on transactions they observed count as Mafia; gas burned by
reverted transactions and the losses of failed attacks count as Moloch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Iterable, Mapping, Optional, Sequence

from .core import Block, ChainState
from .errors import BadShares, UnclassifiableEvent
from .pbs import is_sanctioned


class MevClass(str, Enum):
    MONARCH = "Monarch"
    MAFIA = "Mafia"
    MOLOCH = "Moloch"


class EventKind(str, Enum):
    ATTACK = "attack"  # a closed (or end-of-run marked) attack position
    REVERTED_GAS = "reverted_gas"  # gas paid by any reverted tx


@dataclass(frozen=True)
class MevEvent:
    kind: str
    actor: str
    role: str  # "builder" | "searcher" | "user" | ...
    amount: int  # micros of Y; signed for attacks
    label: str = ""
    round: int = 0


def classify_mev_event(event: MevEvent) -> MevClass:
    """Assign an extraction or waste record to its class."""
    kind = event.kind.value if isinstance(event.kind, Enum) else event.kind
    if kind == EventKind.REVERTED_GAS.value:
        return MevClass.MOLOCH
    if kind == EventKind.ATTACK.value:
        if event.amount <= 0:
            return MevClass.MOLOCH
        if event.role == "builder":
            return MevClass.MONARCH
        if event.role == "searcher":
            return MevClass.MAFIA
    raise UnclassifiableEvent(f"cannot classify {kind!r} by {event.role!r} ({event.label})")


def class_amount(event: MevEvent) -> int:
    """Magnitude credited to the event's class."""
    return abs(event.amount)


def compute_hhi(shares: Sequence[float]) -> float:
    """Herfindahl index of market shares that sum to one."""
    if not shares:
        raise BadShares("no shares")
    if any(s < 0 or math.isnan(s) for s in shares):
        raise BadShares("shares must be non-negative")
    if abs(math.fsum(shares) - 1.0) > 1e-9:
        raise BadShares(f"shares sum to {math.fsum(shares)!r}, not 1")
    return math.fsum(s * s for s in shares)


def window_shares(winners: Sequence[str], participants: Sequence[str]) -> list[float]:
    n = len(winners)
    counts = {p: 0 for p in participants}
    for w in winners:
        counts[w] = counts.get(w, 0) + 1
    return [c / n for _, c in sorted(counts.items())]


@dataclass(frozen=True)
class CensorshipStats:
    compliant_fraction: float
    never_included: int
    mean_delay: Optional[float]  # None when no sanctioned tx was ever included


def censorship_stats(blocks: Sequence[Block], sanctions: Iterable[str],
                     submitted: Mapping[int, int]) -> CensorshipStats:
    """Compliance over a finished chain.

    ``submitted`` maps each sanctioned tx id to the round it was sent; the
    inclusion round of a tx is its block height minus one.
    """
    sanctions = set(sanctions)
    if not blocks:
        return CensorshipStats(1.0, len(submitted), None)
    compliant = 0
    included_at: dict[int, int] = {}
    for b in blocks:
        bad = [t for t in b.payload if is_sanctioned(t, sanctions)]
        if not bad:
            compliant += 1
        for t in bad:
            included_at.setdefault(t.id, b.height - 1)
    delays = [included_at[i] - r for i, r in submitted.items() if i in included_at]
    never = sum(1 for i in submitted if i not in included_at)
    mean = sum(delays) / len(delays) if delays else None
    return CensorshipStats(compliant / len(blocks), never, mean)


def accounting_closure(genesis: ChainState, final: ChainState, roles: Mapping[str, str]) -> dict:
    """Per-asset change by role; the residual must be zero.

    Roles not listed (recipients such as a mixer) fall under ``other``;
    pool reserves are their own term because liquidity providers gain or
    lose against traders.
    """
    out: dict[str, dict[str, int]] = {}
    for asset in ("X", "Y"):
        groups: dict[str, int] = {}
        agents = {a for a, s in genesis.balances if s == asset} | {a for a, s in final.balances if s == asset}
        for agent in agents:
            d = final.balance(agent, asset).micros - genesis.balance(agent, asset).micros
            role = roles.get(agent, "other")
            groups[role] = groups.get(role, 0) + d
        key = "reserve_x" if asset == "X" else "reserve_y"
        groups["pools"] = sum(getattr(p, key).micros for p in final.pools.values()) - sum(
            getattr(p, key).micros for p in genesis.pools.values())
        groups["residual"] = sum(groups.values())
        out[asset] = dict(sorted(groups.items()))
    return out

