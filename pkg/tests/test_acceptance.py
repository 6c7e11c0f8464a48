"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""

import random
import subprocess
import sys
import time
from dataclasses import replace
from statistics import mean

import pytest
from scipy.stats import kendalltau

from mevsim.amm import Direction, Pool, apply_swap, optimal_frontrun_size, quote_swap, realized_slippage, simulate_sandwich
from mevsim.core import SwapIntent
from mevsim.engine import run_scenario
from mevsim.fixed import TokenAmount, amt, parse_micros
from mevsim.pbs import is_sanctioned
from mevsim.policy import Decision, RegulatoryRegime, fee_escalator_auction, simulate_collusion_game, tee_shuffle
from mevsim.scenario import load_scenario

from conftest import SCENARIO_DIR, swap_tx

SHIPPED = sorted(p.stem for p in SCENARIO_DIR.glob("*.toml"))
TOL = 100  # 10^-4 in micros


@pytest.fixture
def verdict(capsys):
    def report(n, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {n:>2}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail
    return report


def load(name):
    return load_scenario(SCENARIO_DIR / f"{name}.toml")


_runs = {}


def shipped_run(name, k=0):
    key = (name, k)
    if key not in _runs:
        _runs[key] = run_scenario(load(name))
    return _runs[key]


def test_c01_amm_oracle_equivalence(verdict):
    rng = random.Random(20240601)
    t0 = time.perf_counter()
    mismatches = k_violations = 0
    for _ in range(100_000):
        x, y = rng.randint(10**6, 10**13), rng.randint(10**6, 10**13)
        a = rng.randint(1, 10**12)
        d = Direction.X_FOR_Y if rng.random() < 0.5 else Direction.Y_FOR_X
        p = Pool("P", TokenAmount(x), TokenAmount(y))
        q, out = apply_swap(p, d, TokenAmount(a))
        in_r, out_r = (x, y) if d is Direction.X_FOR_Y else (y, x)
        if out.micros != out_r * a // (in_r + a):
            mismatches += 1
        # floor leaves under one output micro of product in the pool
        if not 0 <= q.k - p.k < in_r + a:
            k_violations += 1
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and k_violations == 0 and elapsed < 5
    verdict(1, ok, f"1e5 swaps, {mismatches} oracle mismatches, {k_violations} k violations, {elapsed:.2f}s")


def test_c02_canonical_sandwich(verdict):
    t0 = time.perf_counter()
    p = Pool("P1", amt(1000), amt(1000))
    victim = SwapIntent("P1", Direction.Y_FOR_X, amt(100))
    s = simulate_sandwich(p, victim, amt(100))
    clean = quote_swap(p, Direction.Y_FOR_X, amt(100))
    loss = clean.micros - s.victim_out.micros
    slip = realized_slippage(clean, s.victim_out)
    res = run_scenario(load("canonical_sandwich"))
    run_profit = parse_micros(res.summary["mev"]["Mafia"])
    run_loss = parse_micros(res.summary["welfare_loss_total"])
    elapsed = time.perf_counter() - t0
    ok = (abs(s.profit_micros - 18_032_787) <= TOL and abs(run_profit - 18_032_787) <= TOL
          and abs(loss - 15_151_515) <= TOL and abs(run_loss - 15_151_515) <= TOL
          and abs(slip - 0.166667) <= 1e-4 and elapsed < 1)
    verdict(2, ok, f"profit {s.profit_micros / 1e6:.6f} (run {run_profit / 1e6:.6f}), "
                   f"loss {loss / 1e6:.6f}, slippage {slip:.6f}, {elapsed:.2f}s")


def test_c03_sandwich_profitability(verdict):
    rng = random.Random(3)
    bad = cases = 0
    while cases < 1000:
        x, y = rng.randint(10**8, 10**12), rng.randint(10**8, 10**12)
        p = Pool("P", TokenAmount(x), TokenAmount(y))
        size = rng.randint(max(1, y // 10_000), y // 5)
        clean = quote_swap(p, Direction.Y_FOR_X, TokenAmount(size)).micros
        slip_bps = rng.randint(50, 5_000)
        victim = SwapIntent("P", Direction.Y_FOR_X, TokenAmount(size), TokenAmount(clean * (10_000 - slip_bps) // 10_000))
        a_star = optimal_frontrun_size(p, victim, TokenAmount(10 * y)).micros
        if a_star == 0:
            continue
        front = rng.randint(1, a_star)
        cases += 1
        if simulate_sandwich(p, victim, TokenAmount(front)).profit_micros <= 0:
            bad += 1
    verdict(3, bad == 0, f"{cases} instances with front <= a*, {bad} unprofitable")


def test_c04_collusion_threshold(verdict):
    t0 = time.perf_counter()
    fractions = {}
    for f in range(0, 25, 2):
        regime = RegulatoryRegime(True, "1/2", amt(f))
        runs = [simulate_collusion_game(4, 10, regime, 200, random.Random(seed)) for seed in range(20)]
        fractions[f] = mean(r.colluding_fraction for r in runs)
    elapsed = time.perf_counter() - t0
    low = all(fractions[f] >= 0.95 for f in fractions if f <= 10)
    high = all(fractions[f] <= 0.05 for f in fractions if f >= 14)
    transition = min(f for f in fractions if fractions[f] < 0.5)
    ok = low and high and abs(transition - 12) <= 2 and elapsed < 30
    verdict(4, ok, f"fractions {fractions}, transition at F={transition}, {elapsed:.2f}s")


def test_c05_tee_spam(verdict):
    results = {}
    for k in (1, 3, 9):
        rng = random.Random(k)
        victim = swap_tx(1, "u", 1)
        payload = [victim] + [swap_tx(100 + i, "S", 1) for i in range(k)] + [swap_tx(50, "v", 1)]
        wins = 0
        for _ in range(10_000):
            order = [t.sender for t in tee_shuffle(payload, rng)]
            wins += order.index("S") < order.index("u")
        results[k] = wins / 10_000
    ok = all(abs(results[k] - k / (k + 1)) <= 0.02 for k in results)
    verdict(5, ok, "attacker-first frequency " + ", ".join(f"k={k}: {v:.4f}" for k, v in results.items()))


def _window_share(res, builder):
    w = res.winners[-res.scenario.hhi_window:]
    return w.count(builder) / len(w)


def test_c06_centralization_loop(verdict):
    sc = load("centralization")
    ctrl = load("centralization_uniform")
    good = 0
    taus = []
    for seed in range(sc.seed, sc.seed + 20):
        res = run_scenario(replace(sc, seed=seed))
        good += _window_share(res, "B3") >= 0.9
        full = res.hhi_series[sc.hhi_window - 1:]
        t = kendalltau(range(len(full)), full)
        taus.append((t.statistic, t.pvalue))
    trend_ok = all(tau > 0 and p < 0.01 for tau, p in taus)
    ctrl_means = [mean(run_scenario(replace(ctrl, seed=s)).hhi_series) for s in range(ctrl.seed, ctrl.seed + 20)]
    ctrl_ok = all(abs(m - 1 / 3) <= 0.05 for m in ctrl_means)
    ok = good >= 18 and trend_ok and ctrl_ok
    verdict(6, ok, f"B3 share >= 0.9 in {good}/20 seeds, min tau {min(t for t, _ in taus):.3f}, "
                   f"max p {max(p for _, p in taus):.2e}, uniform HHI means "
                   f"[{min(ctrl_means):.4f}, {max(ctrl_means):.4f}]")


def test_c07_censorship_soundness(verdict):
    full = run_scenario(load("censorship_full"))
    sanctions = set(full.scenario.policy.sanctions)
    on_chain = sum(is_sanctioned(t, sanctions) for b in full.blocks for t in b.payload)
    submitted = full.summary["censorship"]["sanctioned_submitted"]
    all_censor = all(b.profile.censoring for b in full.scenario.builders)
    all_regulated = all(r.regulated for r in full.scenario.relays)
    mixed = run_scenario(load("censorship_mixed"))
    relays = mixed.scenario.relays
    frac = mixed.summary["censorship"]["compliant_fraction"]
    ok = (all_censor and all_regulated and len(full.blocks) >= 1000 and submitted > 0 and on_chain == 0
          and 2 * sum(r.regulated for r in relays) == len(relays) and 0 < frac < 1)
    verdict(7, ok, f"{len(full.blocks)} blocks, {submitted} sanctioned submitted, {on_chain} on chain; "
                   f"mixed compliant_fraction {frac:.3f}")


def test_c08_determinism_and_replay(verdict, tmp_path):
    differing, replay_failed = [], []
    for name in SHIPPED:
        a, b = shipped_run(name, 0), shipped_run(name, 1)
        if a.log.text() != b.log.text():
            differing.append(name)
        out = a.write(tmp_path / name)
        proc = subprocess.run([sys.executable, "-m", "mevsim.cli", "replay", "--log", str(out / "events.log")],
                              capture_output=True, text=True)
        if proc.returncode != 0 or a.summary["final_state_hash"] not in proc.stdout:
            replay_failed.append(name)
    ok = not differing and not replay_failed
    verdict(8, ok, f"{len(SHIPPED)} scenarios; differing logs {differing}; replay failures {replay_failed}")


def test_c09_accounting_closure(verdict):
    worst = []
    for name in SHIPPED:
        res = shipped_run(name)
        acc = res.summary["accounting"]
        n_tx = sum(len(b.payload) for b in res.blocks)
        allowed = max(1, -(-n_tx // 1000))  # one micro per started thousand txs
        residual = max(abs(acc["X"]["residual"]), abs(acc["Y"]["residual"]))
        if residual > allowed:
            worst.append((name, residual, allowed))
    verdict(9, not worst, f"{len(SHIPPED)} scenarios closed; out of tolerance {worst}")


def test_c10_escalator_welfare(verdict):
    victim = swap_tx(1, "u000", 100)
    p = Pool("P1", amt(1000), amt(1000))
    value = TokenAmount(simulate_sandwich(p, victim.payload, amt(100)).profit_micros)
    winner, rebate = fee_escalator_auction(victim, {"S1": value, "S2": value}, {"S1": value, "S2": value})
    res = run_scenario(load("canonical_escalator"))
    run_rebate = parse_micros(res.summary["rebates_by_user"]["u000"])
    baseline = run_scenario(load("canonical_sandwich"))
    attacked_loss = parse_micros(baseline.summary["welfare_loss_by_user"]["u000"])
    net_loss = parse_micros(res.summary["welfare_loss_by_user"]["u000"]) - run_rebate
    two_bidders = len(res.scenario.searchers) == 2 and all(
        s.config.bid_fraction == 1 for s in res.scenario.searchers)
    ok = (two_bidders and winner is not None and abs(rebate.micros - 18_032_787) <= TOL
          and abs(run_rebate - 18_032_787) <= TOL and net_loss < attacked_loss)
    verdict(10, ok, f"rebate {run_rebate / 1e6:.6f}, net loss {net_loss / 1e6:.6f} vs attacked {attacked_loss / 1e6:.6f}")
