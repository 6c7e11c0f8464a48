"""Deterministic round loop tying the market together.

Each round: users submit, searchers scan and bid, builders build, relays
forward, the proposer signs, the block executes, then routing statistics,
reputation, regulator audits and metrics are updated. Every random choice
draws from a named stream derived from the scenario seed, so a scenario and
seed fully determine the event log bytes.

Welfare loss compares each user swap against a counterfactual run of the
same scenario with searchers removed and builders made honest. Both runs
draw user arrivals from the same stream and user tx ids from their own id
space, so the same order carries the same id in both.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import random
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Optional

from . import eventlog as ev
from . import strategies
from .amm import Direction, Pool, quote_swap, spot_price
from .core import (
    ArbIntent, Block, Bundle, ChainState, GAS_ASSET, IdAllocator, Receipt, ReceiptStatus, SwapIntent,
    Transaction, TransferIntent, TxKind, block_to_dict, execute_block, apply_transfer, tx_to_dict,
)
from .errors import BuilderRejectsPrivateFlow, NoProfit, NoProfitableSize, NothingToPropose, UnclassifiableEvent
from .fixed import TokenAmount, format_micros
from .mempool import Mempool
from .metrics import (
    EventKind, MevClass, MevEvent, accounting_closure, censorship_stats, class_amount, classify_mev_event,
    compute_hhi, window_shares,
)
from .pbs import (
    Bid, InclusionStats, builder_build_block, channel_contents, is_sanctioned, make_bid,
    miner_build_legacy, proposer_select, relay_select, route_order_flow,
)
from .policy import (
    Decision, RepEvent, ReputationLedger, collusion_decision, fee_escalator_auction, regulator_audit,
    reputation_update,
)
from .scenario import Scenario
from .strategies import Strategy

logger = logging.getLogger(__name__)

USER_ID_START = 1
AGENT_ID_START = 1_000_000_000
REGULATOR = "regulator"
METRIC_FIELDS = ("round", "hhi", "mev_monarch", "mev_mafia", "mev_moloch", "welfare_loss_cum",
                 "compliant_fraction", "gas_waste")


def rng_stream(seed: int, name: str) -> random.Random:
    return random.Random(f"{seed}:{name}")


@dataclass(frozen=True)
class UserOutcome:
    tx_id: int
    user: str
    round: int
    status: str
    out: int  # micros of the output asset
    out_asset: str
    gas_paid: int
    pool: str


@dataclass
class _Attack:
    owner: str
    role: str
    home: str
    pool: str
    round: int
    deltas: dict = field(default_factory=dict)
    success: bool = False
    closed: bool = False


@dataclass
class RunResult:
    scenario: Scenario
    log: ev.EventLog
    metrics: list[dict]
    summary: dict
    genesis: ChainState
    final_state: ChainState
    blocks: list[Block]
    user_outcomes: dict[int, UserOutcome]
    mev_events: list[MevEvent]
    hhi_series: list[float]
    winners: list[str]

    def events_text(self) -> str:
        return self.log.text()

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=METRIC_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(self.metrics)
        return buf.getvalue()

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "events.log").write_text(self.events_text())
        (out / "metrics.csv").write_text(self.metrics_csv())
        (out / "summary.json").write_text(json.dumps(self.summary, sort_keys=True, indent=2) + "\n")
        return out


_VICTIM_KINDS = ("sandwich", "self", "collude", "copy")


def _attack_victim(label: str) -> Optional[int]:
    """Victim tx id encoded in an attack label such as ``S1:sandwich:42``."""
    parts = label.split(":")
    if len(parts) == 3 and parts[1] in _VICTIM_KINDS and parts[2].isdigit():
        return int(parts[2])
    return None


def user_names(count: int) -> list[str]:
    return [f"u{i:03d}" for i in range(count)]


class Simulation:
    """One scenario run. Use ``run_scenario`` unless you need the internals."""

    def __init__(self, scenario: Scenario, baseline: Optional[dict[int, UserOutcome]] = None):
        self.sc = sc = scenario
        self.baseline = baseline
        self.users = user_names(sc.users.count)
        self.sanction_target = sc.policy.sanctions[0] if sc.policy.sanctions else "mixer"
        self.sanctions = set(sc.policy.sanctions)
        self.rng_users = rng_stream(sc.seed, "users")
        self.rng_routing = rng_stream(sc.seed, "routing")
        self.rng_audit = rng_stream(sc.seed, "audit")
        self.rng_tee = rng_stream(sc.seed, "tee")
        self.rng_reports = rng_stream(sc.seed, "reports")
        self.user_ids = IdAllocator(USER_ID_START)
        self.agent_ids = IdAllocator(AGENT_ID_START)

        self.roles: dict[str, str] = {u: "user" for u in self.users}
        balances: dict[tuple[str, str], TokenAmount] = {}
        for u in self.users:
            balances[(u, "X")] = sc.users.balance_x
            balances[(u, "Y")] = sc.users.balance_y
        for s in sc.searchers:
            self.roles[s.config.id] = "searcher"
            balances[(s.config.id, "X")] = s.balance_x
            balances[(s.config.id, "Y")] = s.balance_y
        for b in sc.builders:
            self.roles[b.profile.id] = "builder"
            balances[(b.profile.id, "X")] = b.balance_x
            balances[(b.profile.id, "Y")] = b.balance_y
        for p in sc.proposers:
            self.roles[p] = "proposer"
        self.roles[sc.miner] = "miner"
        self.roles[REGULATOR] = "regulator"
        self.genesis = ChainState.genesis(sc.pools, {k: v for k, v in balances.items() if v.micros})
        self.state = self.genesis
        self.genesis_spot = {p.id: spot_price(p) for p in sc.pools}

        self.mempool = Mempool(sc.topology)
        for b in sc.builders:
            self.mempool.register_builder(b.profile.id, b.profile.accepts_private)
        self.stats = InclusionStats()
        for b in sc.builders:
            self.stats.received[b.profile.id] = b.prior_received
            self.stats.included[b.profile.id] = b.prior_included
        self.reputation = ReputationLedger()
        self.adopters = {u for u in self.users if self.rng_routing.random() < sc.users.initial_adoption}

        self.log = ev.EventLog()
        self.blocks: list[Block] = []
        self.winners: list[str] = []
        self.hhi_series: list[float] = []
        self.metrics: list[dict] = []
        self.user_outcomes: dict[int, UserOutcome] = {}
        self.user_tx_round: dict[int, int] = {}
        self.sanctioned_submitted: dict[int, int] = {}
        self.attacks: dict[str, _Attack] = {}
        self.mev_events: list[MevEvent] = []
        self.mev_totals = {c: 0 for c in MevClass}
        self.gas_waste = 0
        self.targeted: set[int] = set()  # user tx ids some attack was aimed at
        self.unclassified = 0
        self.loss_by_user: dict[str, int] = {}
        self.loss_total = 0
        self.rebates: dict[str, int] = {}
        self.compliant_blocks = 0
        self.handoffs: list[tuple[Transaction, str, str]] = []  # (tx, originator, coalition)
        self.colluding_rounds = 0
        self.penalties: list[dict] = []
        self.collisions = 0
        self.auctions = 0
        self.reports = 0
        self.empty_slots = 0
        self.searcher_by_id = {s.config.id: s.config for s in sc.searchers}
        self.builder_by_id = {b.profile.id: b.profile for b in sc.builders}

    # -- helpers -------------------------------------------------------------

    def _tick(self, rnd: int, offset: int) -> int:
        return rnd * self.sc.ticks_per_round + offset

    def _value_y(self, micros: int, asset: str, spot: Fraction) -> int:
        if asset == "Y":
            return micros
        return (micros * spot.numerator) // spot.denominator

    def _private_builders(self) -> list[str]:
        return sorted(b.profile.id for b in self.sc.builders if b.profile.accepts_private)

    def _send_private(self, bundle: Bundle, builders, tick: int, rnd: int) -> None:
        for b in builders:
            try:
                self.mempool.submit_private_bundle(bundle, b, tick)
            except BuilderRejectsPrivateFlow:
                continue
        self.log.append(rnd, tick, ev.PRIVATE, bundle.submitter, bundle.ids,
                        {"builders": list(builders), "txs": [tx_to_dict(t) for t in bundle.txs]})

    def _broadcast(self, tx: Transaction, node: str, tick: int, rnd: int) -> None:
        self.mempool.broadcast_tx(tx, node, tick)
        self.log.append(rnd, tick, ev.SUBMIT, tx.sender, (tx.id,), {"node": node, "tx": tx_to_dict(tx)})

    # -- round phases --------------------------------------------------------

    def _user_phase(self, rnd: int) -> dict[int, tuple[str, str]]:
        """Draw this round's orders; returns private tx id -> (routed builder, user)."""
        sc, uc, rng = self.sc, self.sc.users, self.rng_users
        pools = list(uc.pools) or [p.id for p in sc.pools]
        routed: dict[int, tuple[str, str]] = {}
        span = max(1, sc.ticks_per_round - 2)
        for _ in range(uc.orders_per_round):
            user = self.users[rng.randrange(len(self.users))]
            pid = pools[rng.randrange(len(pools))]
            if uc.direction == "mixed":
                direction = Direction.Y_FOR_X if rng.random() < 0.5 else Direction.X_FOR_Y
            else:
                direction = Direction(uc.direction)
            size = TokenAmount(rng.randint(uc.size_min.micros, uc.size_max.micros))
            gp = TokenAmount(rng.randint(uc.gas_price_min.micros, uc.gas_price_max.micros))
            tick = self._tick(rnd, rng.randrange(span))
            private = rng.random() < uc.private_share
            quoted = quote_swap(self.state.pools[pid], direction, size)
            min_out = TokenAmount(quoted.micros * (10_000 - uc.slippage_bps) // 10_000)
            tx = Transaction(self.user_ids(), user, TxKind.SWAP, SwapIntent(pid, direction, size, min_out),
                             gp, origin_time=rnd)
            self.user_tx_round[tx.id] = rnd
            if uc.escalator and self._escalate(tx, rnd, tick):
                continue
            if private and sc.mode == "pbs" and self._private_builders():
                mode = uc.routing if (uc.routing != "rate" or user in self.adopters) else "uniform"
                builder = route_order_flow(user, self.stats, mode, self._private_builders(),
                                           rng=self.rng_routing, reputation=self.reputation,
                                           gamma=uc.reputation_gamma)
                self.stats.record_received(builder)
                routed[tx.id] = (builder, user)
                self._send_private(Bundle((tx,), user), [builder], tick, rnd)
            else:
                self._broadcast(tx, uc.node, tick, rnd)
        if rng.random() < uc.sanctioned_rate:
            user = self.users[rng.randrange(len(self.users))]
            tick = self._tick(rnd, rng.randrange(span))
            gp = TokenAmount(uc.gas_price_max.micros)
            tx = Transaction(self.user_ids(), user, TxKind.TRANSFER,
                             TransferIntent(self.sanction_target, "Y", uc.sanctioned_amount), gp, origin_time=rnd)
            self.sanctioned_submitted[tx.id] = rnd
            self._broadcast(tx, uc.node, tick, rnd)
        return routed

    def _escalate(self, order: Transaction, rnd: int, tick: int) -> bool:
        """Reverse auction among sandwich searchers; True when a winner took the order."""
        intent = order.payload
        pool = self.state.pools[intent.pool_id]
        bids, vals = {}, {}
        for sid in sorted(self.searcher_by_id):
            cfg = self.searcher_by_id[sid]
            if Strategy.SANDWICH not in cfg.strategies or intent.pool_id not in cfg.watched_pools:
                continue
            est = strategies.sandwich_estimate(pool, intent, cfg.budget)
            if est is None or est.profit_micros <= 0:
                continue
            value = strategies._to_y(est.profit_micros, intent.direction.asset_in, pool)
            vals[sid] = TokenAmount(value)
            bids[sid] = TokenAmount((value * cfg.bid_fraction.numerator) // cfg.bid_fraction.denominator)
        winner, rebate = fee_escalator_auction(order, bids, vals)
        self.log.append(rnd, tick, ev.AUCTION, order.sender, (order.id,),
                        {"kind": "escalator", "bids": {k: str(v) for k, v in sorted(bids.items())},
                         "winner": winner or "", "rebate": str(rebate)})
        if winner is None:
            return False
        cfg = self.searcher_by_id[winner]
        label = f"{winner}:escalator:{order.id}"
        sandwich = strategies.craft_sandwich(order, pool, cfg, self.agent_ids, gas_price=order.gas_price,
                                             origin_time=rnd, label=label)
        txs = list(sandwich.txs)
        if rebate.micros:
            txs.append(Transaction(self.agent_ids(), winner, TxKind.TRANSFER,
                                   TransferIntent(order.sender, "Y", rebate), order.gas_price,
                                   origin_time=rnd, label=f"{label}:rebate"))
        self.auctions += 1
        self._send_private(Bundle(tuple(txs), winner), self._private_builders(), tick, rnd)
        return True

    def _searcher_phase(self, rnd: int) -> None:
        sc = self.sc
        if not sc.searchers:
            return
        tick = self._tick(rnd, sc.ticks_per_round - 2)
        pools = self.state.pools
        views = {}
        claims: dict[tuple, list[tuple[str, strategies.Opportunity]]] = {}
        for sid in sorted(self.searcher_by_id):
            cfg = self.searcher_by_id[sid]
            node = cfg.node or sc.topology.nodes[0]
            view = self.mempool.node_view(node, tick)
            views[sid] = {t.id: t for t in view}
            used_pools: set = set()
            for opp in strategies.scan_opportunities(view, pools, cfg):
                if used_pools & set(opp.pools):
                    continue
                used_pools.update(opp.pools)
                if opp.kind in (Strategy.SANDWICH, Strategy.FRONT_RUN_COPY):
                    key = ("victim", opp.victim_tx)
                elif opp.kind is Strategy.BACK_RUN:
                    key = ("back", opp.victim_tx)
                else:
                    key = ("arb",) + tuple(sorted(opp.pools))
                claims.setdefault(key, []).append((sid, opp))
        for key in sorted(claims, key=lambda k: tuple(str(x) for x in k)):
            entrants = claims[key]
            if key[0] == "victim":
                self._victim_contest(rnd, tick, key[1], entrants, views)
                continue
            entrants.sort(key=lambda e: e[0])
            if len(entrants) > 1:
                self.collisions += 1
                self.log.append(rnd, tick, ev.COLLISION, entrants[0][0], (),
                                {"key": [str(k) for k in key], "losers": [e[0] for e in entrants[1:]]})
            sid, opp = entrants[0]
            cfg = self.searcher_by_id[sid]
            if key[0] == "back":
                target = views[sid][opp.victim_tx]
                try:
                    tx = strategies.craft_backrun(target, pools[target.payload.pool_id], cfg, self.agent_ids,
                                                  pools, origin_time=rnd)
                except NoProfit:
                    continue
                self._emit(cfg, [target, tx], rnd, tick, public_txs=[tx])
            else:
                pair = strategies.cross_pool_arbitrage(pools[opp.pools[0]], pools[opp.pools[1]], cfg.budget,
                                                       sender=sid, new_id=self.agent_ids,
                                                       gas_price=cfg.gas_bump, origin_time=rnd)
                if pair is None:
                    continue
                pair = [replace(t, label=f"{sid}:arb:{rnd}") for t in pair]
                self._emit(cfg, pair, rnd, tick, public_txs=pair)

    def _emit(self, cfg, txs, rnd: int, tick: int, public_txs) -> None:
        if self.sc.mode == "legacy":
            for t in public_txs:
                self._broadcast(t, cfg.node or self.sc.topology.nodes[0], tick, rnd)
        else:
            self._send_private(Bundle(tuple(txs), cfg.id), self._private_builders(), tick, rnd)

    def _victim_contest(self, rnd: int, tick: int, victim_id: int, entrants, views) -> None:
        """Priority gas auction among searchers chasing the same victim."""
        bidders = []
        victim = views[entrants[0][0]][victim_id]
        for sid, opp in entrants:
            cfg = self.searcher_by_id[sid]
            units = 2 * 100 if opp.kind is Strategy.SANDWICH else 100 * max(1, cfg.spam_copies)
            bidders.append((cfg, TokenAmount(max(0, opp.value_y) // units)))
        result = strategies.run_gas_auction(bidders, victim.gas_price)
        self.log.append(rnd, tick, ev.AUCTION, result.winner or "", (victim_id,),
                        {"kind": "gas", "history": [[s, str(b)] for s, b in result.history]})
        if result.winner is None:
            return
        opp_of = dict(entrants)
        pool = self.state.pools[victim.payload.pool_id]
        legacy = self.sc.mode == "legacy"
        for sid, _ in sorted(entrants, key=lambda e: e[0]):
            if not legacy and sid != result.winner:
                continue
            cfg = self.searcher_by_id[sid]
            opp = opp_of[sid]
            node = cfg.node or self.sc.topology.nodes[0]
            prices = [b for s, b in result.history if s == sid] if legacy else [result.final_bids[sid]]
            if opp.kind is Strategy.FRONT_RUN_COPY:
                copies = max(1, cfg.spam_copies)
                for gp in prices:
                    for _ in range(copies):
                        tx = strategies.craft_frontrun_copy(victim, cfg, self.agent_ids, gas_price=gp,
                                                            origin_time=rnd)
                        self._broadcast(tx, node, tick, rnd)
                continue
            try:
                bundle = strategies.craft_sandwich(victim, pool, cfg, self.agent_ids, gas_price=prices[-1],
                                                   origin_time=rnd)
            except NoProfitableSize:
                continue
            front, _, back = bundle.txs
            if legacy:
                back = replace(back, gas_price=TokenAmount(max(0, victim.gas_price.micros - 1)))
                for gp in prices[:-1]:
                    self._broadcast(replace(front, id=self.agent_ids(), gas_price=gp), node, tick, rnd)
                self._broadcast(front, node, tick, rnd)
                self._broadcast(back, node, tick, rnd)
            else:
                self._send_private(bundle, self._private_builders(), tick, rnd)

    def _collusion_gate(self, h: int, c: int) -> bool:
        decision, _ = collusion_decision(h, c, self.sc.policy.regulator)
        return decision is Decision.COLLUDE

    def _build_phase(self, rnd: int):
        sc = self.sc
        height = self.state.height + 1
        bids: list[Bid] = []
        results = {}
        for spec in sorted(sc.builders, key=lambda b: b.profile.id):
            prof = spec.profile
            tick = self._tick(rnd, sc.ticks_per_round - 1 + prof.latency_advantage)
            view = self.mempool.node_view(prof.node or sc.topology.nodes[0], tick)
            private = channel_contents(self.mempool.channel(prof.id))
            handoffs = [t for t, origin, coal in self.handoffs
                        if prof.colluding and coal == prof.coalition and origin != prof.id]
            res = builder_build_block(
                view, private, prof, self.sanctions, sc.gas_limit, state=self.state, height=height,
                new_id=self.agent_ids, tee_rng=self.rng_tee, tee_overhead=sc.policy.tee_overhead,
                handoffs=handoffs, collusion_gate=self._collusion_gate if prof.colluding else None,
            )
            bid = make_bid(res, prof)
            results[prof.id] = res
            bids.append(bid)
            self.log.append(rnd, tick, ev.BID, prof.id, bid.block.tx_ids,
                            {"amount": str(bid.amount), "profit": format_micros(bid.profit),
                             "colluded": res.colluded})
        offers = []
        for relay in sorted(sc.relays, key=lambda x: x.id):
            best = relay_select(bids, relay, self.sanctions)
            if best is not None:
                offers.append(best)
        proposer = sc.proposers[rnd % len(sc.proposers)]
        try:
            chosen = proposer_select(offers)
            result = results[chosen.builder]
            block = replace(chosen, proposer=proposer)
        except NothingToPropose:
            self.empty_slots += 1
            block = Block(height, proposer, (), TokenAmount(0), sc.gas_limit, proposer)
            result = None
        return block, result

    def _legacy_block(self, rnd: int) -> Block:
        sc = self.sc
        tick = self._tick(rnd, sc.ticks_per_round - 1)
        view = self.mempool.node_view(sc.topology.nodes[0], tick)
        return miner_build_legacy(view, sc.legacy_order, miner=sc.miner, height=self.state.height + 1,
                                  gas_limit=sc.gas_limit)

    # -- accounting ------------------------------------------------------------

    def _record(self, event: MevEvent) -> None:
        try:
            cls = classify_mev_event(event)
        except UnclassifiableEvent:
            self.unclassified += 1
            logger.warning("unclassifiable event %s", event)
            return
        self.mev_events.append(event)
        self.mev_totals[cls] += class_amount(event)

    def _close_attack(self, label: str, a: _Attack, rnd: int, pools) -> None:
        spot = spot_price(pools[a.pool])
        value = sum(self._value_y(v, asset, spot) for asset, v in sorted(a.deltas.items()))
        a.closed = True
        self._record(MevEvent(EventKind.ATTACK.value, a.owner, a.role, value, label, rnd))
        self.log.append(rnd, self._tick(rnd, self.sc.ticks_per_round - 1), ev.ATTACK, a.owner, (),
                        {"label": label, "pnl": format_micros(value), "role": a.role})

    def _after_block(self, rnd: int, block: Block, receipts: list[Receipt],
                     routed: dict[int, tuple[str, str]]) -> None:
        sc = self.sc
        by_id = {t.id: t for t in block.payload}
        included = {r.tx_id for r in receipts if r.status is not ReceiptStatus.DROPPED}
        self.mempool.remove(block.tx_ids)
        for b in self.sc.builders:
            self.mempool.channel(b.profile.id)._queue.clear()
        self.handoffs = [h for h in self.handoffs if h[0].id not in included]

        for t in block.payload:
            victim = _attack_victim(t.label)
            if victim is not None:
                self.targeted.add(victim)
        touched = set()
        for r in receipts:
            tx = by_id[r.tx_id]
            if r.status is ReceiptStatus.REVERTED and r.gas_paid.micros:
                self.gas_waste += r.gas_paid.micros
                # a user's own slippage revert is waste, but nobody extracted it
                if self.roles.get(tx.sender) != "user" or tx.id in self.targeted:
                    self._record(MevEvent(EventKind.REVERTED_GAS.value, tx.sender,
                                          self.roles.get(tx.sender, "other"), r.gas_paid.micros, tx.label, rnd))
            if tx.label.endswith(":rebate"):
                if r.ok:
                    self.rebates[tx.recipient] = self.rebates.get(tx.recipient, 0) + tx.payload.amount.micros
                continue
            if tx.label and r.ok:
                a = self.attacks.get(tx.label)
                if a is None:
                    p = tx.payload
                    home = p.direction.asset_in if isinstance(p, SwapIntent) else "Y"
                    a = self.attacks[tx.label] = _Attack(tx.sender, self.roles.get(tx.sender, "other"), home,
                                                         tx.pools_touched()[0], rnd)
                a.success = True
                for asset, d in r.deltas:
                    a.deltas[asset] = a.deltas.get(asset, 0) + d
                touched.add(tx.label)
            if tx.sender in self.roles and self.roles[tx.sender] == "user" and tx.kind is TxKind.SWAP:
                self._user_outcome(rnd, tx, r)
        for label in sorted(touched):
            a = self.attacks[label]
            one_leg = label.split(":")[1:2] == ["copy"]  # a copy never unwinds, mark it now
            if not a.closed and (one_leg or all(v == 0 for k, v in a.deltas.items() if k != a.home)):
                self._close_attack(label, a, rnd, self.state.pools)

        for tx_id, (b, _) in sorted(routed.items()):
            if tx_id in included and block.builder == b:
                self.stats.record_included(b)
        if sc.users.routing == "rate" and sc.users.adoption_rate > 0:
            missed = sorted({u for tid, (_, u) in routed.items() if tid not in included})
            for u in missed:
                if u not in self.adopters and self.rng_routing.random() < sc.users.adoption_rate:
                    self.adopters.add(u)
        self._reputation(rnd, block, receipts, by_id)

        if not any(is_sanctioned(t, self.sanctions) for t in block.payload):
            self.compliant_blocks += 1

    def _user_outcome(self, rnd: int, tx: Transaction, r: Receipt) -> None:
        p = tx.payload
        out = UserOutcome(tx.id, tx.sender, rnd, r.status.value, r.amount_out.micros if r.ok else 0,
                          p.direction.asset_out, r.gas_paid.micros, p.pool_id)
        self.user_outcomes[tx.id] = out
        if self.baseline is None:
            return
        cf = self.baseline.get(tx.id)
        cf_ok = cf is not None and cf.status == ReceiptStatus.SUCCESS.value
        if not r.ok:
            # the trade never happened; only the gas is lost, unless it failed anyway
            loss = r.gas_paid.micros - (cf.gas_paid if cf is not None and not cf_ok else 0)
        elif cf_ok:
            loss = self._value_y(cf.out - out.out, out.out_asset, self.genesis_spot[p.pool_id])
        else:
            loss = 0
        self.loss_by_user[tx.sender] = self.loss_by_user.get(tx.sender, 0) + loss
        self.loss_total += loss

    def _reputation(self, rnd: int, block: Block, receipts, by_id) -> None:
        uc = self.sc.users
        payload = block.payload
        for i, r in enumerate(receipts):
            tx = by_id[r.tx_id]
            if not r.ok or self.roles.get(tx.sender) != "user":
                continue
            reputation_update(self.reputation, block.builder, RepEvent.INCLUDED, tx_id=tx.id)
            if not uc.report_suspected or tx.kind is not TxKind.SWAP:
                continue
            pool = tx.payload.pool_id
            before = {t.sender for t in payload[:i] if t.sender != tx.sender and pool in t.pools_touched()}
            after = {t.sender for t in payload[i + 1:] if t.sender != tx.sender and pool in t.pools_touched()}
            bracketed = bool(before & after)
            false_alarm = self.rng_reports.random() < uc.false_report_rate
            if bracketed or false_alarm:
                reputation_update(self.reputation, block.builder, RepEvent.USER_REPORT, tx_id=tx.id, user=tx.sender)
                self.reports += 1
                self.log.append(rnd, self._tick(rnd, self.sc.ticks_per_round - 1), ev.REPORT, tx.sender,
                                (tx.id,), {"builder": block.builder, "bracketed": bracketed})

    def _audit(self, rnd: int, block: Block, result) -> None:
        if result is None or not result.colluded:
            return
        prof = self.builder_by_id[block.builder]
        self.colluding_rounds += 1
        for t in result.deferred:
            self.handoffs.append((t, prof.id, prof.coalition))
        members = sorted(b.profile.id for b in self.sc.builders if b.profile.coalition == prof.coalition)
        for pen in regulator_audit([(block.height, members)], self.sc.policy.regulator, self.rng_audit):
            amount = min(pen.amount.micros, self.state.balance(pen.member, GAS_ASSET).micros)
            if amount <= 0:
                continue
            self.state = apply_transfer(self.state, pen.member, REGULATOR, GAS_ASSET, TokenAmount(amount))
            self.penalties.append({"block": pen.block, "member": pen.member, "amount": format_micros(amount)})
            self.log.append(rnd, self._tick(rnd, self.sc.ticks_per_round - 1), ev.PENALTY, pen.member, (),
                            {"to": REGULATOR, "asset": GAS_ASSET, "amount": format_micros(amount),
                             "block": pen.block})

    def _mark_open_attacks(self, rnd: int) -> None:
        for label in sorted(self.attacks):
            a = self.attacks[label]
            if a.success and not a.closed:
                self._close_attack(label, a, rnd, self.state.pools)

    def _metrics_row(self, rnd: int) -> None:
        sc = self.sc
        window = self.winners[-sc.hhi_window:]
        participants = [b.profile.id for b in sc.builders] if sc.mode == "pbs" else [sc.miner]
        hhi = compute_hhi(window_shares(window, participants + [w for w in set(window) if w not in participants]))
        self.hhi_series.append(hhi)
        self.metrics.append({
            "round": rnd,
            "hhi": f"{hhi:.6f}",
            "mev_monarch": format_micros(self.mev_totals[MevClass.MONARCH]),
            "mev_mafia": format_micros(self.mev_totals[MevClass.MAFIA]),
            "mev_moloch": format_micros(self.mev_totals[MevClass.MOLOCH]),
            "welfare_loss_cum": format_micros(self.loss_total),
            "compliant_fraction": f"{self.compliant_blocks / len(self.blocks):.6f}",
            "gas_waste": format_micros(self.gas_waste),
        })

    # -- main loop -------------------------------------------------------------

    def run(self) -> RunResult:
        sc = self.sc
        self.log.append(0, 0, ev.GENESIS, "", (), {"scenario": sc.name, "seed": sc.seed, "mode": sc.mode,
                                                    "state": self.genesis.to_dict()})
        for rnd in range(sc.rounds):
            routed = self._user_phase(rnd)
            self._searcher_phase(rnd)
            if sc.mode == "pbs":
                block, result = self._build_phase(rnd)
            else:
                block, result = self._legacy_block(rnd), None
            self.state, receipts = execute_block(self.state, block)
            self.blocks.append(block)
            self.winners.append(block.builder)
            tick = self._tick(rnd, sc.ticks_per_round - 1)
            self.log.append(rnd, tick, ev.BLOCK, block.builder, block.tx_ids, {"block": block_to_dict(block)})
            self.log.append(rnd, tick, ev.RECEIPTS, block.builder, block.tx_ids, {
                "receipts": [[r.tx_id, r.status.value, str(r.gas_paid), str(r.amount_out)] for r in receipts]})
            self._after_block(rnd, block, receipts, routed)
            self._audit(rnd, block, result)
            if rnd == sc.rounds - 1:
                self._mark_open_attacks(rnd)
            self._metrics_row(rnd)
        self.log.append(sc.rounds, 0, ev.END, "", (), {"state_hash": self.state.state_hash()})
        return RunResult(sc, self.log, self.metrics, self._summary(), self.genesis, self.state, self.blocks,
                         self.user_outcomes, self.mev_events, self.hhi_series, self.winners)

    def _summary(self) -> dict:
        sc = self.sc
        cens = censorship_stats(self.blocks, self.sanctions, self.sanctioned_submitted)
        participants = sorted(set(self.winners) | {b.profile.id for b in sc.builders})
        shares = {p: self.winners.count(p) / len(self.winners) for p in participants}
        closure = accounting_closure(self.genesis, self.state, self.roles)
        user_txs = sum(1 for t in self.user_tx_round)
        return {
            "scenario": sc.name,
            "seed": sc.seed,
            "mode": sc.mode,
            "rounds": sc.rounds,
            "final_state_hash": self.state.state_hash(),
            "mev": {c.value: format_micros(v) for c, v in self.mev_totals.items()},
            "gas_waste": format_micros(self.gas_waste),
            "unclassified_events": self.unclassified,
            "welfare_loss_total": format_micros(self.loss_total),
            "welfare_loss_by_user": {u: format_micros(v) for u, v in sorted(self.loss_by_user.items())},
            "rebates_total": format_micros(sum(self.rebates.values())),
            "rebates_by_user": {u: format_micros(v) for u, v in sorted(self.rebates.items())},
            "builder_shares": {p: round(v, 6) for p, v in shares.items()},
            "hhi_final": round(self.hhi_series[-1], 6),
            "hhi_mean": round(sum(self.hhi_series) / len(self.hhi_series), 6),
            "censorship": {"compliant_fraction": round(cens.compliant_fraction, 6),
                           "never_included": cens.never_included,
                           "mean_delay": None if cens.mean_delay is None else round(cens.mean_delay, 6),
                           "sanctioned_submitted": len(self.sanctioned_submitted)},
            "accounting": closure,
            "colluding_rounds": self.colluding_rounds,
            "penalties": len(self.penalties),
            "collisions": self.collisions,
            "escalator_auctions": self.auctions,
            "reports": self.reports,
            "empty_slots": self.empty_slots,
            "user_orders": user_txs,
            "inclusion_rates": {b: str(self.stats.rate(b)) for b in sorted(self.stats.received)},
            "reputation": {b.profile.id: str(self.reputation.score(b.profile.id))
                           for b in sorted(sc.builders, key=lambda x: x.profile.id)},
        }


def run_scenario(scenario: Scenario, *, rounds: Optional[int] = None, seed: Optional[int] = None) -> RunResult:
    """Run ``scenario`` (optionally overriding rounds/seed) with its welfare baseline."""
    if rounds is not None:
        scenario = replace(scenario, rounds=rounds)
    if seed is not None:
        scenario = replace(scenario, seed=seed)
    baseline = None
    if scenario.welfare and scenario.has_adversaries:
        baseline = Simulation(scenario.counterfactual()).run().user_outcomes
    return Simulation(scenario, baseline).run()
