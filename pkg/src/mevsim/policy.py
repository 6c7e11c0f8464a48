"""Interventions against builder misbehaviour.

Covers the regulator's penalty game over collusion, enforced random ordering
inside a trusted enclave (and the spam that defeats it), a user-report
reputation ledger, and a reverse auction in which extractors pay users for
the right to execute their orders.

Randomness always comes in as an explicit ``random.Random``; nothing here
touches a global generator.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Mapping, NamedTuple, Optional, Sequence, Union

from .core import Transaction, with_gas
from .errors import DuplicateReport, UnknownInclusion
from .fixed import TokenAmount

Num = Union[int, float, str, Fraction, TokenAmount]


def _frac(v: Num) -> Fraction:
    if isinstance(v, TokenAmount):
        return v.to_fraction()
    if isinstance(v, float):
        return Fraction(repr(v))
    return Fraction(v)


# -- regulator -----------------------------------------------------------------

@dataclass(frozen=True)
class RegulatoryRegime:
    active: bool = False
    p_detect: Fraction = Fraction(0)
    penalty: TokenAmount = TokenAmount(0)

    def __post_init__(self):
        object.__setattr__(self, "p_detect", _frac(self.p_detect))
        if not 0 <= self.p_detect <= 1:
            raise ValueError("p_detect must be in [0, 1]")

    @property
    def effective_p(self) -> Fraction:
        return self.p_detect if self.active else Fraction(0)


class Decision(str, Enum):
    COLLUDE = "Collude"
    HONEST = "Honest"


def collusion_decision(honest_profit: Num, collusive_profit: Num,
                       regime: RegulatoryRegime) -> tuple[Decision, Union[Fraction, float]]:
    """Collude iff the expected-penalty-adjusted collusive payoff beats honesty.

    Also returns the penalty at which a builder becomes indifferent,
    ``(c - h) / p``; infinite when nothing is ever detected.
    """
    h, c = _frac(honest_profit), _frac(collusive_profit)
    p = regime.effective_p
    f = regime.penalty.to_fraction() if regime.active else Fraction(0)
    threshold: Union[Fraction, float] = (c - h) / p if p > 0 else math.inf
    if c <= h:
        return Decision.HONEST, threshold
    return (Decision.COLLUDE if c - p * f > h else Decision.HONEST), threshold


class Penalty(NamedTuple):
    block: int
    member: str
    amount: TokenAmount


def regulator_audit(colluding_blocks: Sequence[tuple[int, Sequence[str]]], regime: RegulatoryRegime,
                    rng: random.Random) -> list[Penalty]:
    """Audit each colluding block independently; on detection fine every coalition member.

    ``colluding_blocks`` holds (block height, coalition members) pairs.
    """
    if not regime.active:
        return []
    p = float(regime.p_detect)
    out: list[Penalty] = []
    for height, members in colluding_blocks:
        if rng.random() < p:
            out.extend(Penalty(height, m, regime.penalty) for m in sorted(members))
    return out


class CollusionRun(NamedTuple):
    rounds: int
    colluding_rounds: int
    detections: int
    penalties_paid: Fraction
    net_profit: Fraction  # per member

    @property
    def colluding_fraction(self) -> float:
        return self.colluding_rounds / self.rounds if self.rounds else 0.0


def simulate_collusion_game(honest_profit: Num, collusive_profit: Num, regime: RegulatoryRegime,
                            rounds: int, rng: random.Random,
                            members: Sequence[str] = ("B1", "B2")) -> CollusionRun:
    """Repeated two-builder collusion game under a penalty regime.

    Each round the coalition decides, and a colluding round is audited like
    a colluding block. Payoffs are per member.
    """
    h, c = _frac(honest_profit), _frac(collusive_profit)
    colluded = detections = 0
    paid = Fraction(0)
    net = Fraction(0)
    for r in range(rounds):
        decision, _ = collusion_decision(h, c, regime)
        if decision is Decision.COLLUDE:
            colluded += 1
            net += c
            fines = regulator_audit([(r, members)], regime, rng)
            if fines:
                detections += 1
                fine = fines[0].amount.to_fraction()
                paid += fine
                net -= fine
        else:
            net += h
    return CollusionRun(rounds, colluded, detections, paid, net)


# -- trusted-enclave ordering -------------------------------------------------------

def tee_shuffle(payload: Sequence[Transaction], rng: random.Random, overhead_gas: int = 0) -> list[Transaction]:
    """Uniform random permutation of the payload; bundles do not survive.

    Each tx also carries ``overhead_gas`` extra gas for the enclave step.
    """
    out = list(payload)
    rng.shuffle(out)
    if overhead_gas:
        out = [with_gas(t, t.gas_used + overhead_gas) for t in out]
    return out


def spam_success_probability(k: int) -> Fraction:
    """Chance that at least one of k spam copies lands ahead of the victim after a uniform shuffle."""
    if k < 0:
        raise ValueError("k must be >= 0")
    return Fraction(k, k + 1)


# -- reputation ----------------------------------------------------------------

class RepEvent(str, Enum):
    INCLUDED = "Included"
    USER_REPORT = "UserReport"


@dataclass
class ReputationLedger:
    inclusions: dict[str, int] = field(default_factory=dict)
    reports: dict[str, int] = field(default_factory=dict)
    _included_by: dict[int, str] = field(default_factory=dict, repr=False)
    _reported: set = field(default_factory=set, repr=False)

    def score(self, builder: str) -> Fraction:
        i = self.inclusions.get(builder, 0)
        r = self.reports.get(builder, 0)
        s = Fraction(i - r + 1, i + 2)
        return min(Fraction(1), max(Fraction(0), s))

    def copy(self) -> "ReputationLedger":
        return ReputationLedger(dict(self.inclusions), dict(self.reports),
                                dict(self._included_by), set(self._reported))


def reputation_update(ledger: ReputationLedger, builder: str, event: RepEvent, *,
                      tx_id: Optional[int] = None, user: Optional[str] = None) -> ReputationLedger:
    """Record an inclusion or a user's suspicion report; updates ``ledger`` in place and returns it."""
    event = RepEvent(event)
    if event is RepEvent.INCLUDED:
        if tx_id is not None:
            ledger._included_by[tx_id] = builder
        ledger.inclusions[builder] = ledger.inclusions.get(builder, 0) + 1
        return ledger
    if tx_id is None or ledger._included_by.get(tx_id) != builder:
        raise UnknownInclusion(f"tx {tx_id} was not included by {builder}")
    key = (user, tx_id)
    if key in ledger._reported:
        raise DuplicateReport(f"{user} already reported tx {tx_id}")
    ledger._reported.add(key)
    ledger.reports[builder] = ledger.reports.get(builder, 0) + 1
    return ledger


# -- fee escalator (reverse auction) ---------------------------------------------

def fee_escalator_auction(order: Transaction, bids: Mapping[str, TokenAmount],
                          valuations: Optional[Mapping[str, TokenAmount]] = None) -> tuple[Optional[str], TokenAmount]:
    """First-price sealed-bid auction for the exclusive right to execute ``order``.

    Returns (winner, rebate to the user); (None, 0) without bids. When
    ``valuations`` is given, a bid above the bidder's extractable value is
    rejected.
    """
    if valuations is not None:
        for who, b in bids.items():
            cap = valuations.get(who)
            if cap is None or b > cap:
                raise ValueError(f"bid from {who} on tx {order.id} exceeds its extractable value")
    if not bids:
        return None, TokenAmount(0)
    winner = min(bids, key=lambda k: (-bids[k].micros, k))
    return winner, bids[winner]
