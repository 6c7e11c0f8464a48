"""Deterministic agent-based simulator of MEV extraction.

Models a public mempool with latency, searcher bots attacking a
constant-product AMM, a builder/relay/proposer block market, policy
interventions, and metrics splitting extracted value into Monarch, Mafia
and Moloch classes.
"""

from .fixed import TokenAmount, amt
from .amm import Direction, Pool, apply_swap, optimal_frontrun_size, quote_swap, realized_slippage
from .core import Block, Bundle, ChainState, SwapIntent, Transaction, execute_block, execute_transaction
from .engine import RunResult, run_scenario
from .scenario import Scenario, load_scenario, parse_scenario

__all__ = [
    "TokenAmount", "amt", "Direction", "Pool", "apply_swap", "optimal_frontrun_size", "quote_swap",
    "realized_slippage", "Block", "Bundle", "ChainState", "SwapIntent", "Transaction", "execute_block",
    "execute_transaction", "RunResult", "run_scenario", "Scenario", "load_scenario", "parse_scenario",
]

__version__ = "0.1.0"
