"""Append-only event log and its replay.

One record per line, fields separated by tabs::

    round  tick  type  actor  ids  data

``ids`` is a comma-separated list of tx ids (``-`` when empty) and ``data``
is compact JSON with sorted keys, so equal runs produce equal bytes. The
GENESIS record holds the full initial state; replay re-executes every BLOCK
and PENALTY record on it and compares the result with the END hash.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Sequence

from .core import ChainState, apply_transfer, block_from_dict, execute_block
from .fixed import TokenAmount

HEADER = (
    "# mevsim event log v1\n"
    "# fields: round\ttick\ttype\tactor\tids\tdata(json)\n"
)

GENESIS = "GENESIS"
SUBMIT = "SUBMIT"
PRIVATE = "PRIVATE"
AUCTION = "AUCTION"
COLLISION = "COLLISION"
BID = "BID"
BLOCK = "BLOCK"
RECEIPTS = "RECEIPTS"
PENALTY = "PENALTY"
REPORT = "REPORT"
ATTACK = "ATTACK"
END = "END"


@dataclass(frozen=True)
class Record:
    round: int
    tick: int
    type: str
    actor: str
    ids: tuple[int, ...]
    data: dict

    def to_line(self) -> str:
        ids = ",".join(str(i) for i in self.ids) if self.ids else "-"
        blob = json.dumps(self.data, sort_keys=True, separators=(",", ":"))
        return f"{self.round}\t{self.tick}\t{self.type}\t{self.actor or '-'}\t{ids}\t{blob}\n"

    @classmethod
    def from_line(cls, line: str) -> "Record":
        rnd, tick, typ, actor, ids, blob = line.rstrip("\n").split("\t", 5)
        id_list = () if ids == "-" else tuple(int(i) for i in ids.split(","))
        return cls(int(rnd), int(tick), typ, "" if actor == "-" else actor, id_list, json.loads(blob))


class EventLog:
    """In-memory ordered record list; ``append`` is the only mutation."""

    def __init__(self):
        self._records: list[Record] = []

    def append(self, rnd: int, tick: int, typ: str, actor: str = "", ids: Sequence[int] = (),
               data: Optional[dict] = None) -> Record:
        rec = Record(rnd, tick, typ, actor, tuple(ids), data or {})
        self._records.append(rec)
        return rec

    def __iter__(self) -> Iterator[Record]:
        return iter(self._records)

    def __len__(self) -> int:
        return len(self._records)

    def of_type(self, typ: str) -> list[Record]:
        return [r for r in self._records if r.type == typ]

    def text(self) -> str:
        return HEADER + "".join(r.to_line() for r in self._records)

    def write(self, path) -> None:
        Path(path).write_text(self.text())


def read_log(path) -> list[Record]:
    out = []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#") or not line.strip():
                continue
            out.append(Record.from_line(line))
    return out


@dataclass(frozen=True)
class ReplayResult:
    final_hash: str
    expected_hash: Optional[str]
    blocks: int

    @property
    def ok(self) -> bool:
        return self.expected_hash is not None and self.final_hash == self.expected_hash


def replay(records: Sequence[Record]) -> ReplayResult:
    """Rebuild the final chain state from GENESIS, BLOCK and PENALTY records."""
    state: Optional[ChainState] = None
    expected = None
    blocks = 0
    for rec in records:
        if rec.type == GENESIS:
            state = ChainState.from_dict(rec.data["state"])
        elif rec.type == BLOCK:
            if state is None:
                raise ValueError("BLOCK before GENESIS")
            state, _ = execute_block(state, block_from_dict(rec.data["block"]))
            blocks += 1
        elif rec.type == PENALTY:
            state = apply_transfer(state, rec.actor, rec.data["to"], rec.data["asset"],
                                   TokenAmount.of(rec.data["amount"]))
        elif rec.type == END:
            expected = rec.data["state_hash"]
    if state is None:
        raise ValueError("log has no GENESIS record")
    return ReplayResult(state.state_hash(), expected, blocks)


def replay_file(path) -> ReplayResult:
    return replay(read_log(path))
