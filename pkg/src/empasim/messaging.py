"""Message envelopes and the hierarchic router.

The routing graph has one node per live core plus global memory.  Edges:

* hex adjacency between cores that share a boundary;
* a logical bus between the heads of hex-adjacent clusters;
* head <-> global memory.

Memory is a terminal: core-to-core routes never pass through it.  Denied
cores may be a destination (the delivery is then refused) but are never
used as a relay.
"""

from __future__ import annotations

import csv
import io
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

from .topology import Clustering, NoProxyAvailable, TopologyError, gateway_head, proxy_for

GLOBAL_MEMORY = -1


class MessageKind(Enum):
    REGISTER_TRANSFER = "RegisterTransfer"
    QT_CREATE_REQUEST = "QtCreateRequest"
    QT_RESULT = "QtResult"
    MEMORY_READ = "MemoryRead"
    MEMORY_READ_REPLY = "MemoryReadReply"
    MEMORY_WRITE = "MemoryWrite"
    MEMORY_WRITE_ACK = "MemoryWriteAck"

    @property
    def is_memory(self) -> bool:
        return self in _MEMORY_KINDS

    @property
    def is_request(self) -> bool:
        return self in (MessageKind.MEMORY_READ, MessageKind.MEMORY_WRITE)


_MEMORY_KINDS = frozenset(
    {
        MessageKind.MEMORY_READ,
        MessageKind.MEMORY_READ_REPLY,
        MessageKind.MEMORY_WRITE,
        MessageKind.MEMORY_WRITE_ACK,
    }
)


class RoutingError(Exception):
    pass


class Unroutable(RoutingError):
    pass


@dataclass(frozen=True)
class Message:
    """Immutable envelope.  ``src``/``dst`` are physical core ids."""

    kind: MessageKind
    src: int
    dst: int
    seq: int = 0
    values: tuple[tuple[int, int], ...] = ()
    mask: int = 0
    qt_id: int | None = None
    fragment: str | None = None
    address: int | None = None
    word: int | None = None
    requester: int | None = None

    def __post_init__(self) -> None:
        if not self.kind.is_memory and self.src == self.dst:
            raise ValueError(f"{self.kind.value} from core {self.src} to itself")
        if self.kind.is_request and self.dst != GLOBAL_MEMORY:
            raise ValueError(f"{self.kind.value} must target global memory")
        if self.kind in (MessageKind.MEMORY_READ_REPLY, MessageKind.MEMORY_WRITE_ACK):
            if self.src != GLOBAL_MEMORY:
                raise ValueError(f"{self.kind.value} must come from global memory")
        if self.kind is MessageKind.QT_RESULT and self.qt_id is None:
            raise ValueError("QtResult needs the child qt_id")


@dataclass(frozen=True)
class Route:
    nodes: tuple[int, ...]

    @property
    def hops(self) -> int:
        return len(self.nodes) - 1

    @property
    def src(self) -> int:
        return self.nodes[0]

    @property
    def dst(self) -> int:
        return self.nodes[-1]

    def __contains__(self, core: int) -> bool:
        return core in self.nodes


@dataclass(frozen=True)
class Timing:
    cycle_per_instr: int = 1
    hop_cost: int = 3
    memory_latency: int = 100
    meta_dispatch_cost: int = 5

    def __post_init__(self) -> None:
        for name in ("cycle_per_instr", "hop_cost", "memory_latency", "meta_dispatch_cost"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass(frozen=True)
class DeliveryEvent:
    time: int
    message: Message
    route: Route
    nacked: bool = False


class Router:
    """Shortest-path routing over the hierarchic fabric; pure given its inputs."""

    def __init__(self, clustering: Clustering, denied: Iterable[int] = ()):
        self.clustering = clustering
        self.denied = frozenset(denied)
        self.bus = self._build_bus()
        n = clustering.grid.size
        self._adj = tuple(
            tuple(sorted(set(clustering.neighbors(c)) | set(self.bus.get(c, ())))) for c in range(n)
        )
        self._trees: dict[int, tuple[dict[int, int], dict[int, int]]] = {}
        self._gateways: dict[int, int] = {}

    def _build_bus(self) -> dict[int, tuple[int, ...]]:
        cl = self.clustering
        links: dict[int, set[int]] = {}
        for core in range(cl.grid.size):
            a = cl.head_of(core)
            for nb in cl.neighbors(core):
                b = cl.head_of(nb)
                if a is None or b is None or a == b or a in self.denied or b in self.denied:
                    continue
                links.setdefault(a, set()).add(b)
                links.setdefault(b, set()).add(a)
        return {h: tuple(sorted(v)) for h, v in links.items()}

    def graph_neighbors(self, core: int) -> tuple[int, ...]:
        return self._adj[core]

    def _tree(self, src: int) -> tuple[dict[int, int], dict[int, int]]:
        if src not in self._trees:
            self._trees[src] = self._bfs(src, None)
        return self._trees[src]

    def _bfs(self, src: int, allowed: set[int] | None) -> tuple[dict[int, int], dict[int, int]]:
        dist, parent = {src: 0}, {}
        todo = deque([src])
        while todo:
            cur = todo.popleft()
            if cur != src and cur in self.denied:
                continue
            for nxt in self._adj[cur]:
                if nxt in dist or (allowed is not None and nxt not in allowed):
                    continue
                dist[nxt] = dist[cur] + 1
                parent[nxt] = cur
                todo.append(nxt)
        return dist, parent

    @staticmethod
    def _path(parent: dict[int, int], src: int, dst: int) -> tuple[int, ...]:
        path = [dst]
        while path[-1] != src:
            path.append(parent[path[-1]])
        return tuple(reversed(path))

    def _check(self, core: int) -> None:
        try:
            self.clustering.grid.check(core)
        except TopologyError as exc:
            raise Unroutable(str(exc)) from None

    def distance(self, src: int, dst: int) -> int | None:
        self._check(src)
        self._check(dst)
        return self._tree(src)[0].get(dst)

    def route(self, src: int, dst: int) -> Route:
        """Shortest route between two cores, or from a core to global memory.

        Routes inside one cluster are kept inside it whenever that costs no
        extra hop.  Memory routes end at the requester's gateway head.
        """
        self._check(src)
        if dst == GLOBAL_MEMORY:
            head = self.gateway(src)
            if head == src:
                return Route((src, GLOBAL_MEMORY))
            if head in self.clustering.neighbors(src):
                return Route((src, head, GLOBAL_MEMORY))
            proxy = proxy_for(src, self.clustering, head, self.denied)
            return Route((src,) + self.route(proxy, head).nodes + (GLOBAL_MEMORY,))
        self._check(dst)
        if src == dst:
            return Route((src,))
        dist, parent = self._tree(src)
        if dst not in dist:
            raise Unroutable(f"no live path from core {src} to core {dst}")
        cl = self.clustering
        if cl.address_of(src).cluster_id == cl.address_of(dst).cluster_id:
            members = set(cl.cluster_of(src).members)
            ldist, lparent = self._bfs(src, members)
            if ldist.get(dst) == dist[dst]:
                return Route(self._path(lparent, src, dst))
        return Route(self._path(parent, src, dst))

    def route_message(self, msg: Message) -> Route:
        if msg.src == GLOBAL_MEMORY:
            return Route(tuple(reversed(self.route(msg.dst, GLOBAL_MEMORY).nodes)))
        return self.route(msg.src, msg.dst)

    def gateway(self, core: int) -> int:
        """Head through which ``core`` reaches global memory."""
        if core not in self._gateways:
            try:
                head = gateway_head(core, self.clustering, self.denied)
            except NoProxyAvailable as exc:
                raise Unroutable(str(exc)) from None
            if head != core and head not in self._tree(core)[0]:
                raise Unroutable(f"core {core} cannot reach its gateway head {head}")
            self._gateways[core] = head
        return self._gateways[core]

    def reachable(self, src: int, dst: int) -> bool:
        return dst in self._tree(src)[0]


def route(msg: Message, router: Router) -> Route:
    return router.route_message(msg)


def deliver(
    msg: Message,
    route: Route,
    now: int,
    timing: Timing = Timing(),
    denied: Iterable[int] = (),
) -> DeliveryEvent:
    """Arrival of ``msg`` sent at ``now`` along ``route``.

    Arrival is ``now + hops * hop_cost``, plus ``memory_latency`` for memory
    requests (the access happens at that instant).  A message to a denied
    core is refused: the event is a NACK arriving back at the sender after
    the round trip.
    """
    travel = route.hops * timing.hop_cost
    if msg.dst != GLOBAL_MEMORY and msg.dst in frozenset(denied):
        return DeliveryEvent(now + 2 * travel, msg, route, nacked=True)
    extra = timing.memory_latency if msg.kind.is_request else 0
    return DeliveryEvent(now + travel + extra, msg, route)


@dataclass
class MessageTrace:
    """Rows of (send_time, arrival_time, kind, src, dst, hops)."""

    rows: list[tuple[int, int, str, int, int, int]] = field(default_factory=list)

    def record(self, send: int, event: DeliveryEvent) -> None:
        m = event.message
        kind = m.kind.value + ("/NACK" if event.nacked else "")
        self.rows.append((send, event.time, kind, m.src, m.dst, event.route.hops))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["send_time", "arrival_time", "kind", "src", "dst", "hops"])
        writer.writerows(self.rows)
        return buf.getvalue()
