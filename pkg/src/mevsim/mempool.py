"""Transaction propagation with per-node latency, plus private bundle channels.

Nodes see a public transaction only after the link latency from its origin
has elapsed, so two nodes can hold different pending sets at the same tick.
Bundles sent to a builder's private channel never show up in any node view.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple

from .core import Bundle, Transaction
from .errors import BuilderRejectsPrivateFlow, UnknownNode

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NetworkTopology:
    nodes: tuple[str, ...]
    latency: Mapping[tuple[str, str], int] = field(default_factory=dict)
    default_latency: int = 1

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        if len(set(self.nodes)) != len(self.nodes):
            raise ValueError("duplicate node ids in topology")
        for (a, b), lat in self.latency.items():
            if a not in self.nodes or b not in self.nodes:
                raise UnknownNode(f"latency entry ({a}, {b}) names an unknown node")
            if not isinstance(lat, int) or lat < 0:
                raise ValueError(f"latency ({a}, {b}) must be a non-negative integer")
            if a == b and lat != 0:
                raise ValueError(f"latency ({a}, {a}) must be 0")
        if self.default_latency < 0:
            raise ValueError("default_latency must be non-negative")

    @classmethod
    def uniform(cls, nodes: Iterable[str], ticks: int = 1) -> "NetworkTopology":
        return cls(tuple(nodes), {}, ticks)

    def lat(self, a: str, b: str) -> int:
        if a not in self.nodes:
            raise UnknownNode(a)
        if b not in self.nodes:
            raise UnknownNode(b)
        if a == b:
            return 0
        v = self.latency.get((a, b))
        if v is None:
            v = self.latency.get((b, a), self.default_latency)
        return v

    @property
    def max_latency(self) -> int:
        return max((self.lat(a, b) for a in self.nodes for b in self.nodes), default=0)


class PrivateReceipt(NamedTuple):
    builder: str
    tick: int
    tx_ids: tuple[int, ...]


class PrivateChannel:
    """Queue of bundles addressed to one builder.

    Deliberately exposes no read method; the PBS module reads ``_queue``
    through ``pbs.channel_contents``.
    """

    __slots__ = ("builder", "_queue")

    def __init__(self, builder: str):
        self.builder = builder
        self._queue: list[tuple[int, Bundle]] = []

    def __len__(self) -> int:
        return len(self._queue)


class Mempool:
    """Per-node pending pools over a shared topology."""

    def __init__(self, topology: NetworkTopology):
        self.topology = topology
        self._txs: dict[int, Transaction] = {}
        self._arrivals: dict[str, dict[int, int]] = {n: {} for n in topology.nodes}
        self._channels: dict[str, PrivateChannel] = {}
        self._accepts_private: dict[str, bool] = {}

    # -- public flow --------------------------------------------------------

    def broadcast_tx(self, tx: Transaction, origin: str, tick: int) -> dict[str, int]:
        """Schedule ``tx`` at every node; returns node -> first visible tick."""
        if origin not in self._arrivals:
            raise UnknownNode(origin)
        schedule = {n: tick + self.topology.lat(origin, n) for n in self.topology.nodes}
        self._txs[tx.id] = tx
        for n, t in schedule.items():
            self._arrivals[n][tx.id] = t
        return schedule

    def node_view(self, node: str, tick: int) -> list[Transaction]:
        """Pending txs visible at ``node`` by ``tick``, in (arrival, id) order."""
        arr = self._arrivals.get(node)
        if arr is None:
            raise UnknownNode(node)
        seen = sorted((t, i) for i, t in arr.items() if t <= tick)
        return [self._txs[i] for _, i in seen]

    def arrival(self, node: str, tx_id: int) -> int | None:
        return self._arrivals[node].get(tx_id)

    def pending_ids(self) -> set[int]:
        return set(self._txs)

    def remove(self, ids: Iterable[int]) -> None:
        """Forget txs that were included on chain or found invalid."""
        for i in ids:
            if self._txs.pop(i, None) is not None:
                for arr in self._arrivals.values():
                    arr.pop(i, None)

    mark_included = remove

    # -- private flow -------------------------------------------------------

    def register_builder(self, builder: str, accepts_private: bool = True) -> None:
        self._accepts_private[builder] = accepts_private
        self._channels.setdefault(builder, PrivateChannel(builder))

    def channel(self, builder: str) -> PrivateChannel:
        return self._channels[builder]

    def submit_private_bundle(self, bundle: Bundle, builder: str, tick: int = 0) -> PrivateReceipt:
        if not self._accepts_private.get(builder, False):
            raise BuilderRejectsPrivateFlow(builder)
        self._channels[builder]._queue.append((tick, bundle))
        return PrivateReceipt(builder, tick, bundle.ids)
