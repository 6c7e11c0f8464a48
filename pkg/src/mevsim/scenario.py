"""Scenario configuration: parsing, validation and the canonical form.

A scenario is written by hand as TOML. ``to_canonical`` turns a parsed
scenario back into a fully-defaulted JSON document with sorted keys; both
forms parse to the same ``Scenario``. Validation failures raise
``ConfigError`` carrying the offending field path, e.g.
``builders[2].payment_fraction``.
"""

from __future__ import annotations

import copy
import json
import re
import sys
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Any, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .amm import Direction, Pool
from .errors import ConfigError, ZeroReserve
from .fixed import TokenAmount, format_micros
from .mempool import NetworkTopology
from .pbs import BuilderProfile, RelayProfile
from .policy import RegulatoryRegime
from .strategies import SearcherConfig, Strategy

MODES = ("pbs", "legacy")
ROUTING_MODES = ("rate", "uniform", "reputation")
DIRECTIONS = ("mixed", Direction.X_FOR_Y.value, Direction.Y_FOR_X.value)


@dataclass(frozen=True)
class UserConfig:
    count: int = 10
    orders_per_round: int = 1
    size_min: TokenAmount = TokenAmount.of(1)
    size_max: TokenAmount = TokenAmount.of(10)
    direction: str = "mixed"
    pools: tuple[str, ...] = ()
    slippage_bps: int = 100
    gas_price_min: TokenAmount = TokenAmount.of("0.001")
    gas_price_max: TokenAmount = TokenAmount.of("0.001")
    private_share: float = 0.0
    routing: str = "rate"
    initial_adoption: float = 1.0
    adoption_rate: float = 0.0
    reputation_gamma: float = 1.0
    escalator: bool = False
    report_suspected: bool = False
    false_report_rate: float = 0.0
    sanctioned_rate: float = 0.0
    sanctioned_amount: TokenAmount = TokenAmount.of(1)
    node: str = ""
    balance_x: TokenAmount = TokenAmount.of(1_000_000)
    balance_y: TokenAmount = TokenAmount.of(1_000_000)


@dataclass(frozen=True)
class SearcherSpec:
    config: SearcherConfig
    balance_x: TokenAmount = TokenAmount(0)
    balance_y: TokenAmount = TokenAmount.of(10_000)


@dataclass(frozen=True)
class BuilderSpec:
    profile: BuilderProfile
    balance_x: TokenAmount = TokenAmount(0)
    balance_y: TokenAmount = TokenAmount.of(10_000)
    prior_included: int = 0
    prior_received: int = 0


@dataclass(frozen=True)
class PolicyConfig:
    sanctions: tuple[str, ...] = ()
    regulator: RegulatoryRegime = RegulatoryRegime()
    tee_overhead: int = 20


@dataclass(frozen=True)
class Scenario:
    name: str
    mode: str
    rounds: int
    seed: int
    pools: tuple[Pool, ...]
    topology: NetworkTopology
    users: UserConfig = UserConfig()
    searchers: tuple[SearcherSpec, ...] = ()
    builders: tuple[BuilderSpec, ...] = ()
    relays: tuple[RelayProfile, ...] = ()
    proposers: tuple[str, ...] = ("V0",)
    policy: PolicyConfig = PolicyConfig()
    ticks_per_round: int = 4
    gas_limit: int = 10_000
    hhi_window: int = 50
    legacy_order: str = "greedy"
    miner: str = "miner"
    welfare: bool = True

    @property
    def has_adversaries(self) -> bool:
        return bool(self.searchers) or any(
            b.profile.self_dealing or b.profile.colluding for b in self.builders)

    def counterfactual(self) -> "Scenario":
        """Same scenario with every searcher removed and every builder made honest."""
        honest = tuple(
            replace(b, profile=replace(b.profile, honest=not b.profile.censoring, self_dealing=False,
                                       colluding=False, coalition=""))
            for b in self.builders)
        return replace(self, searchers=(), builders=honest, welfare=False)


# -- parsing helpers -------------------------------------------------------------

class _Reader:
    """Typed access to one table with path-tagged errors and unknown-key checks."""

    def __init__(self, data: Any, path: str):
        if not isinstance(data, dict):
            raise ConfigError(path or "<root>", "expected a table")
        self.data = data
        self.path = path
        self.used: set[str] = set()

    def at(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def raw(self, key: str, default: Any = None) -> Any:
        self.used.add(key)
        return self.data.get(key, default)

    def has(self, key: str) -> bool:
        return key in self.data

    def int(self, key: str, default: Optional[int] = None, lo: Optional[int] = None) -> int:
        v = self.raw(key, default)
        if v is None:
            raise ConfigError(self.at(key), "required")
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(self.at(key), f"expected an integer, got {v!r}")
        if lo is not None and v < lo:
            raise ConfigError(self.at(key), f"must be >= {lo}")
        return v

    def str(self, key: str, default: Optional[str] = None, choices=None) -> str:
        v = self.raw(key, default)
        if v is None:
            raise ConfigError(self.at(key), "required")
        if not isinstance(v, str):
            raise ConfigError(self.at(key), f"expected a string, got {v!r}")
        if choices is not None and v not in choices:
            raise ConfigError(self.at(key), f"must be one of {', '.join(choices)}")
        return v

    def bool(self, key: str, default: bool = False) -> bool:
        v = self.raw(key, default)
        if not isinstance(v, bool):
            raise ConfigError(self.at(key), f"expected true/false, got {v!r}")
        return v

    def amount(self, key: str, default=None) -> TokenAmount:
        v = self.raw(key, default)
        if v is None:
            raise ConfigError(self.at(key), "required")
        if isinstance(v, TokenAmount):
            return v
        try:
            return TokenAmount.of(v)
        except (TypeError, ValueError) as exc:
            raise ConfigError(self.at(key), str(exc)) from None

    def prob(self, key: str, default: float = 0.0) -> float:
        v = self.raw(key, default)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(self.at(key), f"expected a number, got {v!r}")
        v = float(v)
        if not 0.0 <= v <= 1.0:
            raise ConfigError(self.at(key), "must be in [0, 1]")
        return v

    def number(self, key: str, default: float) -> float:
        v = self.raw(key, default)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(self.at(key), f"expected a number, got {v!r}")
        return float(v)

    def fraction(self, key: str, default) -> Fraction:
        v = self.raw(key, default)
        if isinstance(v, bool):
            raise ConfigError(self.at(key), f"expected a number, got {v!r}")
        try:
            return Fraction(str(v))
        except (TypeError, ValueError, ZeroDivisionError):
            raise ConfigError(self.at(key), f"expected a number or ratio, got {v!r}") from None

    def strs(self, key: str, default=()) -> tuple[str, ...]:
        v = self.raw(key, list(default))
        if not isinstance(v, list) or not all(isinstance(s, str) for s in v):
            raise ConfigError(self.at(key), "expected a list of strings")
        return tuple(v)

    def table(self, key: str) -> "_Reader":
        return _Reader(self.raw(key, {}), self.at(key))

    def tables(self, key: str) -> list["_Reader"]:
        v = self.raw(key, [])
        if not isinstance(v, list):
            raise ConfigError(self.at(key), "expected an array of tables")
        return [_Reader(t, f"{self.at(key)}[{i}]") for i, t in enumerate(v)]

    def done(self) -> None:
        extra = sorted(set(self.data) - self.used)
        if extra:
            raise ConfigError(self.at(extra[0]), "unknown key")


def _unique(ids: list[str], path: str) -> None:
    seen = set()
    for i, v in enumerate(ids):
        if v in seen:
            raise ConfigError(f"{path}[{i}].id", f"duplicate id {v!r}")
        seen.add(v)


def parse_scenario(data: dict) -> Scenario:
    """Validate a raw config mapping (from TOML or canonical JSON)."""
    r = _Reader(data, "")
    name = r.str("name", "scenario")
    mode = r.str("mode", "pbs", MODES)
    rounds = r.int("rounds", lo=1)
    seed = r.int("seed", 0, lo=0)
    ticks = r.int("ticks_per_round", 4, lo=3)
    gas_limit = r.int("gas_limit", 10_000, lo=1)
    hhi_window = r.int("hhi_window", 50, lo=1)
    legacy_order = r.str("legacy_order", "greedy", ("naive", "greedy"))
    miner = r.str("miner", "miner")
    welfare = r.bool("welfare", True)
    proposers = r.strs("proposers", ("V0",))
    if not proposers:
        raise ConfigError("proposers", "at least one proposer is required")

    t = r.table("topology")
    nodes = t.strs("nodes", ("n0",))
    if not nodes:
        raise ConfigError(t.at("nodes"), "at least one node is required")
    default_latency = t.int("default_latency", 1, lo=0)
    lat_raw = t.raw("latency", [])
    latency = {}
    if not isinstance(lat_raw, list):
        raise ConfigError(t.at("latency"), "expected a list of [node, node, ticks]")
    for i, entry in enumerate(lat_raw):
        p = f"{t.at('latency')}[{i}]"
        if (not isinstance(entry, list) or len(entry) != 3 or not isinstance(entry[0], str)
                or not isinstance(entry[1], str) or isinstance(entry[2], bool) or not isinstance(entry[2], int)):
            raise ConfigError(p, "expected [node, node, ticks]")
        for n in entry[:2]:
            if n not in nodes:
                raise ConfigError(p, f"unknown node {n!r}")
        if entry[2] < 0 or (entry[0] == entry[1] and entry[2] != 0):
            raise ConfigError(p, "latency must be >= 0, and 0 from a node to itself")
        latency[(entry[0], entry[1])] = entry[2]
    t.done()
    topology = NetworkTopology(nodes, latency, default_latency)

    def node_of(rd: _Reader) -> str:
        n = rd.str("node", nodes[0])
        if n not in nodes:
            raise ConfigError(rd.at("node"), f"unknown node {n!r}")
        return n

    pools = []
    for pr in r.tables("pools"):
        pid = pr.str("id")
        try:
            pools.append(Pool(pid, pr.amount("reserve_x"), pr.amount("reserve_y"), pr.int("fee_bps", 0)))
        except (ValueError, ZeroReserve) as exc:
            raise ConfigError(pr.path, str(exc)) from None
        pr.done()
    if not pools:
        raise ConfigError("pools", "at least one pool is required")
    _unique([p.id for p in pools], "pools")
    pool_ids = {p.id for p in pools}

    u = r.table("users")
    user_pools = u.strs("pools", ())
    for i, pid in enumerate(user_pools):
        if pid not in pool_ids:
            raise ConfigError(f"{u.at('pools')}[{i}]", f"unknown pool {pid!r}")
    users = UserConfig(
        count=u.int("count", 10, lo=1),
        orders_per_round=u.int("orders_per_round", 1, lo=0),
        size_min=u.amount("size_min", "1"),
        size_max=u.amount("size_max", "10"),
        direction=u.str("direction", "mixed", DIRECTIONS),
        pools=user_pools,
        slippage_bps=u.int("slippage_bps", 100, lo=0),
        gas_price_min=u.amount("gas_price_min", "0.001"),
        gas_price_max=u.amount("gas_price_max", "0.001"),
        private_share=u.prob("private_share", 0.0),
        routing=u.str("routing", "rate", ROUTING_MODES),
        initial_adoption=u.prob("initial_adoption", 1.0),
        adoption_rate=u.prob("adoption_rate", 0.0),
        reputation_gamma=u.number("reputation_gamma", 1.0),
        escalator=u.bool("escalator", False),
        report_suspected=u.bool("report_suspected", False),
        false_report_rate=u.prob("false_report_rate", 0.0),
        sanctioned_rate=u.prob("sanctioned_rate", 0.0),
        sanctioned_amount=u.amount("sanctioned_amount", "1"),
        node=node_of(u),
        balance_x=u.amount("balance_x", "1000000"),
        balance_y=u.amount("balance_y", "1000000"),
    )
    if users.slippage_bps > 10_000:
        raise ConfigError(u.at("slippage_bps"), "must be <= 10000")
    if users.size_min.micros <= 0 or users.size_max < users.size_min:
        raise ConfigError(u.at("size_max"), "need 0 < size_min <= size_max")
    if users.gas_price_max < users.gas_price_min:
        raise ConfigError(u.at("gas_price_max"), "must be >= gas_price_min")
    u.done()

    searchers = []
    for sr in r.tables("searchers"):
        sid = sr.str("id")
        watched = sr.strs("watched_pools", sorted(pool_ids))
        for i, pid in enumerate(watched):
            if pid not in pool_ids:
                raise ConfigError(f"{sr.at('watched_pools')}[{i}]", f"unknown pool {pid!r}")
        strat_names = sr.strs("strategies", (Strategy.SANDWICH.value,))
        try:
            strats = frozenset(Strategy(s) for s in strat_names)
        except ValueError as exc:
            raise ConfigError(sr.at("strategies"), str(exc)) from None
        try:
            cfg = SearcherConfig(
                sid, watched, strats,
                gas_bump=sr.amount("gas_bump", "0.000001"),
                max_escalations=sr.int("max_escalations", 10),
                budget=sr.amount("budget", "100"),
                node=node_of(sr),
                spam_copies=sr.int("spam_copies", 0),
                bid_fraction=sr.fraction("bid_fraction", 1),
            )
        except ValueError as exc:
            raise ConfigError(sr.path, str(exc)) from None
        if not 0 <= cfg.bid_fraction <= 1:
            raise ConfigError(sr.at("bid_fraction"), "must be in [0, 1]")
        searchers.append(SearcherSpec(cfg, sr.amount("balance_x", "0"), sr.amount("balance_y", "10000")))
        sr.done()
    _unique([s.config.id for s in searchers], "searchers")

    builders = []
    for br in r.tables("builders"):
        bid = br.str("id")
        pf_path = br.at("payment_fraction")
        pf = br.fraction("payment_fraction", "9/10")
        if not 0 <= pf <= 1:
            raise ConfigError(pf_path, "must be in [0, 1]")
        sd, cens, coll = br.bool("self_dealing"), br.bool("censoring"), br.bool("colluding")
        try:
            prof = BuilderProfile(
                bid,
                honest=br.bool("honest", not (sd or cens or coll)),
                self_dealing=sd,
                censoring=cens,
                colluding=coll,
                coalition=br.str("coalition", ""),
                latency_advantage=br.int("latency_advantage", 0),
                payment_fraction=pf,
                tee=br.bool("tee", False),
                accepts_private=br.bool("accepts_private", True),
                node=node_of(br),
                attack_budget=br.amount("attack_budget", "100"),
            )
        except ValueError as exc:
            raise ConfigError(br.path, str(exc)) from None
        prior = br.raw("inclusion_prior", [0, 0])
        if (not isinstance(prior, list) or len(prior) != 2
                or not all(isinstance(v, int) and not isinstance(v, bool) and v >= 0 for v in prior)
                or prior[0] > prior[1]):
            raise ConfigError(br.at("inclusion_prior"), "expected [included, received] with included <= received")
        builders.append(BuilderSpec(prof, br.amount("balance_x", "0"), br.amount("balance_y", "10000"),
                                    prior[0], prior[1]))
        br.done()
    _unique([b.profile.id for b in builders], "builders")
    builder_ids = [b.profile.id for b in builders]

    relays = []
    for rr in r.tables("relays"):
        conn = rr.strs("builders", ())
        for i, b in enumerate(conn):
            if b not in builder_ids:
                raise ConfigError(f"{rr.at('builders')}[{i}]", f"unknown builder {b!r}")
        relays.append(RelayProfile(rr.str("id"), rr.bool("regulated", False), conn))
        rr.done()
    _unique([x.id for x in relays], "relays")

    if mode == "pbs":
        if not builders:
            raise ConfigError("builders", "pbs mode needs at least one builder")
        if not relays:
            raise ConfigError("relays", "pbs mode needs at least one relay")
        for i, b in enumerate(builder_ids):
            if not any(not x.builders or b in x.builders for x in relays):
                raise ConfigError(f"builders[{i}].id", f"builder {b!r} is connected to no relay")

    pol = r.table("policy")
    regulator = RegulatoryRegime(pol.bool("regulator_active", False), pol.fraction("p_detect", 0),
                                 pol.amount("penalty", "0"))
    if not 0 <= regulator.p_detect <= 1:
        raise ConfigError(pol.at("p_detect"), "must be in [0, 1]")
    policy = PolicyConfig(pol.strs("sanctions", ()), regulator, pol.int("tee_overhead", 20, lo=0))
    pol.done()
    r.done()

    agent_ids = set(builder_ids) | {s.config.id for s in searchers} | set(proposers) | {miner}
    if len(agent_ids) != len(builder_ids) + len(searchers) + len(set(proposers)) + 1:
        raise ConfigError("proposers", "agent ids must be distinct across roles")
    return Scenario(name, mode, rounds, seed, tuple(pools), topology, users, tuple(searchers),
                    tuple(builders), tuple(relays), proposers, policy, ticks, gas_limit, hhi_window,
                    legacy_order, miner, welfare)


# -- loading / canonical form ---------------------------------------------------

def load_raw(path) -> dict:
    path = Path(path)
    text = path.read_text()
    try:
        if path.suffix == ".json":
            return json.loads(text)
        return tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(str(path), f"cannot parse: {exc}") from None


def load_scenario(path) -> Scenario:
    return parse_scenario(load_raw(path))


def _amt(a: TokenAmount) -> str:
    return format_micros(a.micros)


def _frac(f: Fraction) -> str:
    return str(f)


def to_canonical(s: Scenario) -> dict:
    """Fully-defaulted plain mapping for ``s``; parses back to an equal Scenario."""
    u = s.users
    return {
        "name": s.name,
        "mode": s.mode,
        "rounds": s.rounds,
        "seed": s.seed,
        "ticks_per_round": s.ticks_per_round,
        "gas_limit": s.gas_limit,
        "hhi_window": s.hhi_window,
        "legacy_order": s.legacy_order,
        "miner": s.miner,
        "welfare": s.welfare,
        "proposers": list(s.proposers),
        "topology": {
            "nodes": list(s.topology.nodes),
            "default_latency": s.topology.default_latency,
            "latency": [[a, b, v] for (a, b), v in sorted(s.topology.latency.items())],
        },
        "pools": [{"id": p.id, "reserve_x": _amt(p.reserve_x), "reserve_y": _amt(p.reserve_y),
                   "fee_bps": p.fee_bps} for p in s.pools],
        "users": {
            "count": u.count, "orders_per_round": u.orders_per_round,
            "size_min": _amt(u.size_min), "size_max": _amt(u.size_max),
            "direction": u.direction, "pools": list(u.pools), "slippage_bps": u.slippage_bps,
            "gas_price_min": _amt(u.gas_price_min), "gas_price_max": _amt(u.gas_price_max),
            "private_share": u.private_share, "routing": u.routing,
            "initial_adoption": u.initial_adoption, "adoption_rate": u.adoption_rate,
            "reputation_gamma": u.reputation_gamma, "escalator": u.escalator,
            "report_suspected": u.report_suspected, "false_report_rate": u.false_report_rate,
            "sanctioned_rate": u.sanctioned_rate, "sanctioned_amount": _amt(u.sanctioned_amount),
            "node": u.node, "balance_x": _amt(u.balance_x), "balance_y": _amt(u.balance_y),
        },
        "searchers": [{
            "id": c.id, "watched_pools": list(c.watched_pools),
            "strategies": sorted(x.value for x in c.strategies),
            "gas_bump": _amt(c.gas_bump), "max_escalations": c.max_escalations, "budget": _amt(c.budget),
            "node": c.node, "spam_copies": c.spam_copies, "bid_fraction": _frac(c.bid_fraction),
            "balance_x": _amt(sp.balance_x), "balance_y": _amt(sp.balance_y),
        } for sp in s.searchers for c in (sp.config,)],
        "builders": [{
            "id": p.id, "honest": p.honest, "self_dealing": p.self_dealing, "censoring": p.censoring,
            "colluding": p.colluding, "coalition": p.coalition, "latency_advantage": p.latency_advantage,
            "payment_fraction": _frac(p.payment_fraction), "tee": p.tee, "accepts_private": p.accepts_private,
            "node": p.node, "attack_budget": _amt(p.attack_budget),
            "balance_x": _amt(b.balance_x), "balance_y": _amt(b.balance_y),
            "inclusion_prior": [b.prior_included, b.prior_received],
        } for b in s.builders for p in (b.profile,)],
        "relays": [{"id": x.id, "regulated": x.regulated, "builders": list(x.builders)} for x in s.relays],
        "policy": {
            "sanctions": list(s.policy.sanctions),
            "regulator_active": s.policy.regulator.active,
            "p_detect": _frac(s.policy.regulator.p_detect),
            "penalty": _amt(s.policy.regulator.penalty),
            "tee_overhead": s.policy.tee_overhead,
        },
    }


def canonical_json(s: Scenario) -> str:
    return json.dumps(to_canonical(s), sort_keys=True, indent=2) + "\n"


# -- sweep parameter paths -------------------------------------------------------

_SEG = re.compile(r"([A-Za-z_][A-Za-z0-9_]*)(?:\[(\d+)\])?")


def parse_value(text: str) -> Any:
    """Interpret a sweep value: TOML scalar syntax, falling back to a bare string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def set_path(raw: dict, path: str, value: Any) -> dict:
    """Return a copy of ``raw`` with ``path`` (e.g. ``builders[0].payment_fraction``) set."""
    out = copy.deepcopy(raw)
    node: Any = out
    parts = path.split(".")
    for k, part in enumerate(parts):
        m = _SEG.fullmatch(part)
        if not m:
            raise ConfigError(path, "malformed parameter path")
        key, idx = m.group(1), m.group(2)
        last = k == len(parts) - 1
        if not isinstance(node, dict):
            raise ConfigError(path, "path walks into a non-table value")
        if idx is None:
            if last:
                node[key] = value
            else:
                node = node.setdefault(key, {})
            continue
        seq = node.get(key)
        i = int(idx)
        if not isinstance(seq, list) or i >= len(seq):
            raise ConfigError(path, f"{key}[{i}] does not exist")
        if last:
            seq[i] = value
        else:
            node = seq[i]
    return out
