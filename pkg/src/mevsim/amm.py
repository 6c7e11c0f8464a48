"""Constant-product market math.

All functions are pure and work on integer micros internally. Outputs are
floored, so rounding always leaves the extra dust in the pool.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from fractions import Fraction
from typing import TYPE_CHECKING, NamedTuple

from .errors import ZeroReserve
from .fixed import TokenAmount

if TYPE_CHECKING:
    from .core import SwapIntent

BPS = 10_000
MAX_BISECTION_STEPS = 64


class Direction(str, Enum):
    X_FOR_Y = "XforY"  # pay X, receive Y
    Y_FOR_X = "YforX"  # pay Y, receive X

    @property
    def opposite(self) -> "Direction":
        return Direction.Y_FOR_X if self is Direction.X_FOR_Y else Direction.X_FOR_Y

    @property
    def asset_in(self) -> str:
        return "X" if self is Direction.X_FOR_Y else "Y"

    @property
    def asset_out(self) -> str:
        return "Y" if self is Direction.X_FOR_Y else "X"


@dataclass(frozen=True)
class Pool:
    id: str
    reserve_x: TokenAmount
    reserve_y: TokenAmount
    fee_bps: int = 0

    def __post_init__(self):
        if self.reserve_x.micros <= 0 or self.reserve_y.micros <= 0:
            raise ZeroReserve(f"pool {self.id}: reserves must be positive")
        if not 0 <= self.fee_bps <= 1000:
            raise ValueError(f"pool {self.id}: fee_bps {self.fee_bps} outside [0, 1000]")

    def reserves(self, direction: Direction) -> tuple[int, int]:
        """(in_reserve, out_reserve) in micros for a swap in ``direction``."""
        if direction is Direction.X_FOR_Y:
            return self.reserve_x.micros, self.reserve_y.micros
        return self.reserve_y.micros, self.reserve_x.micros

    @property
    def k(self) -> int:
        return self.reserve_x.micros * self.reserve_y.micros


def _out_micros(in_r: int, out_r: int, amount_in: int, fee_bps: int) -> int:
    # out = out_r - k / (in_r + a*(1-fee)), floored; with integer math
    # floor(out_r - q) == out_r - ceil(q)
    if in_r <= 0 or out_r <= 0:
        raise ZeroReserve("reserve is zero")
    k = in_r * out_r
    num = k * BPS
    den = in_r * BPS + amount_in * (BPS - fee_bps)
    new_out = -(-num // den)
    return out_r - new_out


def quote_swap(pool: Pool, direction: Direction, amount_in: TokenAmount) -> TokenAmount:
    if amount_in.micros <= 0:
        raise ValueError("amount_in must be positive")
    in_r, out_r = pool.reserves(Direction(direction))
    return TokenAmount(_out_micros(in_r, out_r, amount_in.micros, pool.fee_bps))


def apply_swap(pool: Pool, direction: Direction, amount_in: TokenAmount) -> tuple[Pool, TokenAmount]:
    direction = Direction(direction)
    out = quote_swap(pool, direction, amount_in)
    if direction is Direction.X_FOR_Y:
        new = replace(pool, reserve_x=pool.reserve_x + amount_in, reserve_y=pool.reserve_y - out)
    else:
        new = replace(pool, reserve_y=pool.reserve_y + amount_in, reserve_x=pool.reserve_x - out)
    return new, out


def spot_price(pool: Pool) -> Fraction:
    """Price of one X in Y."""
    return Fraction(pool.reserve_y.micros, pool.reserve_x.micros)


def realized_slippage(quoted_out: TokenAmount, executed_out: TokenAmount) -> float:
    if quoted_out.micros <= 0:
        raise ValueError("quoted_out must be positive")
    return (quoted_out.micros - executed_out.micros) / quoted_out.micros


class SandwichOutcome(NamedTuple):
    front_in: TokenAmount
    front_out: TokenAmount
    victim_out: TokenAmount
    back_out: TokenAmount
    pool_after: Pool

    @property
    def profit_micros(self) -> int:
        """Attacker round-trip gain in the victim's input asset (may be negative)."""
        return self.back_out.micros - self.front_in.micros


def victim_out_after_front(pool: Pool, victim: "SwapIntent", front: TokenAmount) -> TokenAmount:
    if front.micros > 0:
        pool, _ = apply_swap(pool, victim.direction, front)
    return quote_swap(pool, victim.direction, victim.amount_in)


def simulate_sandwich(pool: Pool, victim: "SwapIntent", front: TokenAmount) -> SandwichOutcome:
    """Run front buy, victim, back sell sequentially on ``pool``.

    The victim leg ignores its min_out here; callers check it.
    """
    direction = Direction(victim.direction)
    p = pool
    front_out = TokenAmount(0)
    if front.micros > 0:
        p, front_out = apply_swap(p, direction, front)
    p, v_out = apply_swap(p, direction, victim.amount_in)
    back_out = TokenAmount(0)
    if front_out.micros > 0:
        p, back_out = apply_swap(p, direction.opposite, front_out)
    return SandwichOutcome(front, front_out, v_out, back_out, p)


def optimal_frontrun_size(pool: Pool, victim: "SwapIntent", budget: TokenAmount) -> TokenAmount:
    """Largest front-run input <= budget that keeps the victim at or above min_out.

    Victim output falls monotonically in the front-run size, so the feasible
    set is an interval [0, a*]; a* is located by integer bisection on micros.
    Returns zero when even one micro of front-running breaks min_out.
    """
    if victim.amount_in.micros <= 0:
        raise ValueError("victim amount_in must be positive")
    floor_out = victim.min_out.micros

    def ok(a: int) -> bool:
        return victim_out_after_front(pool, victim, TokenAmount(a)).micros >= floor_out

    hi = budget.micros
    if hi <= 0 or not ok(1):
        return TokenAmount(0)
    if ok(hi):
        return TokenAmount(hi)
    lo = 1  # ok(lo) holds, ok(hi) fails
    for _ in range(MAX_BISECTION_STEPS):
        if hi - lo <= 1:
            break
        mid = (lo + hi) // 2
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return TokenAmount(lo)


def two_pool_round_trip(buy_pool: Pool, sell_pool: Pool, amount_y: TokenAmount) -> tuple[TokenAmount, TokenAmount, Pool, Pool]:
    """Buy X with ``amount_y`` on one pool, sell all of it on the other.

    Returns (x_bought, y_back, buy_pool_after, sell_pool_after).
    """
    b, x = apply_swap(buy_pool, Direction.Y_FOR_X, amount_y)
    s, y = apply_swap(sell_pool, Direction.X_FOR_Y, x) if x.micros > 0 else (sell_pool, TokenAmount(0))
    return x, y, b, s
