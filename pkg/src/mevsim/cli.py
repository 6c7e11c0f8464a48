"""Command-line entry point: ``sim run | sweep | replay | canon | list``."""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

from .engine import run_scenario
from .errors import ConfigError
from .eventlog import replay_file
from .fixed import parse_micros
from .scenario import canonical_json, load_raw, parse_scenario, parse_value, set_path

log = logging.getLogger("mevsim")

EXIT_CONFIG = 2


def shipped_scenarios() -> list[str]:
    root = resources.files("mevsim") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def resolve_scenario(name: str) -> Path:
    """A path on disk, or the name of a shipped scenario."""
    p = Path(name)
    if p.exists():
        return p
    shipped = resources.files("mevsim") / "scenarios" / f"{name}.toml"
    if shipped.is_file():
        return Path(str(shipped))
    raise ConfigError("--scenario", f"no such file or shipped scenario: {name}")


def _parse_params(specs: Sequence[str]) -> list[tuple[str, list]]:
    out = []
    for spec in specs:
        if "=" not in spec:
            raise ConfigError("--param", f"expected <path>=<v1,v2,...>, got {spec!r}")
        path, values = spec.split("=", 1)
        vals = [parse_value(v.strip()) for v in values.split(",") if v.strip()]
        if not vals:
            raise ConfigError(path, "no values given")
        out.append((path.strip(), vals))
    return out


def _sweep_cell(raw: dict, seed: int, out_dir: str) -> dict:
    scenario = replace(parse_scenario(raw), seed=seed)
    result = run_scenario(scenario)
    result.write(out_dir)
    s = result.summary
    return {
        "seed": seed,
        "mev_monarch": s["mev"]["Monarch"],
        "mev_mafia": s["mev"]["Mafia"],
        "mev_moloch": s["mev"]["Moloch"],
        "gas_waste": s["gas_waste"],
        "welfare_loss": s["welfare_loss_total"],
        "hhi_final": s["hhi_final"],
        "hhi_mean": s["hhi_mean"],
        "compliant_fraction": s["censorship"]["compliant_fraction"],
        "colluding_rounds": s["colluding_rounds"],
    }


def _mean_amount(values: list[str]) -> str:
    micros = [parse_micros(v) for v in values]
    q = sum(micros) // len(micros)
    sign = "-" if q < 0 else ""
    return f"{sign}{abs(q) // 1_000_000}.{abs(q) % 1_000_000:06d}"


def cmd_run(args) -> int:
    scenario = parse_scenario(load_raw(resolve_scenario(args.scenario)))
    result = run_scenario(scenario, rounds=args.rounds, seed=args.seed)
    out = result.write(args.out)
    s = result.summary
    print(f"{s['scenario']}: {s['rounds']} rounds, seed {s['seed']} -> {out}")
    print(f"  MEV Monarch {s['mev']['Monarch']}  Mafia {s['mev']['Mafia']}  Moloch {s['mev']['Moloch']}")
    print(f"  welfare loss {s['welfare_loss_total']}  final HHI {s['hhi_final']}  state {s['final_state_hash'][:16]}")
    return 0


def cmd_sweep(args) -> int:
    path = resolve_scenario(args.scenario)
    base = load_raw(path)
    params = _parse_params(args.param)
    base_seed = parse_scenario(base).seed
    cells = []
    for combo in itertools.product(*[vals for _, vals in params]):
        raw = base
        for (p, _), v in zip(params, combo):
            raw = set_path(raw, p, v)
        parse_scenario(raw)  # fail fast, before any worker starts
        cells.append((dict(zip([p for p, _ in params], combo)), raw))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = []
    for i, (assign, raw) in enumerate(cells):
        for k in range(args.seeds):
            jobs.append((i, raw, base_seed + k, str(out / f"cell_{i:03d}" / f"seed_{base_seed + k}")))
    if args.workers == 1:
        rows = [_sweep_cell(raw, seed, d) for _, raw, seed, d in jobs]
    else:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            rows = list(pool.map(_sweep_cell, [j[1] for j in jobs], [j[2] for j in jobs], [j[3] for j in jobs]))
    by_cell: dict[int, list[dict]] = {}
    for (i, _, _, _), row in zip(jobs, rows):
        by_cell.setdefault(i, []).append(row)
    fields = [p for p, _ in params] + ["seeds", "mev_monarch", "mev_mafia", "mev_moloch", "gas_waste",
                                       "welfare_loss", "hhi_final", "hhi_mean", "compliant_fraction",
                                       "colluding_rounds"]
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for i, (assign, _) in enumerate(cells):
            rs = by_cell[i]
            row = {p: json.dumps(v) if not isinstance(v, str) else v for p, v in assign.items()}
            row["seeds"] = len(rs)
            for key in ("mev_monarch", "mev_mafia", "mev_moloch", "gas_waste", "welfare_loss"):
                row[key] = _mean_amount([r[key] for r in rs])
            for key in ("hhi_final", "hhi_mean", "compliant_fraction", "colluding_rounds"):
                row[key] = f"{sum(r[key] for r in rs) / len(rs):.6f}"
            w.writerow(row)
    print(f"{len(cells)} cells x {args.seeds} seeds -> {out / 'sweep.csv'}")
    return 0


def cmd_replay(args) -> int:
    res = replay_file(args.log)
    if res.ok:
        print(f"replay ok: {res.blocks} blocks, state {res.final_hash}")
        return 0
    print(f"replay MISMATCH: got {res.final_hash}, log says {res.expected_hash}", file=sys.stderr)
    return 1


def cmd_canon(args) -> int:
    text = canonical_json(parse_scenario(load_raw(resolve_scenario(args.scenario))))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_list(args) -> int:
    for name in shipped_scenarios():
        print(name)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sim", description="Deterministic MEV supply-chain simulator")
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one scenario")
    p.add_argument("--scenario", required=True, help="TOML/JSON file or shipped scenario name")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--rounds", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run the cross-product of parameter values")
    p.add_argument("--scenario", required=True)
    p.add_argument("--param", action="append", default=[], metavar="PATH=V1,V2,...")
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--workers", type=int, default=None, help="process count (default: CPU count)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("replay", help="re-execute a log and check the final state hash")
    p.add_argument("--log", required=True)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("canon", help="print the canonical JSON form of a scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_canon)

    p = sub.add_parser("list", help="list shipped scenarios")
    p.set_defaults(func=cmd_list)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "rounds", None) is not None and args.rounds < 1:
        print("config error: --rounds: must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    if getattr(args, "seeds", None) is not None and args.seeds < 1:
        print("config error: --seeds: must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
