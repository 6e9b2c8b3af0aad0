"""Hexagonal core lattice, 7-cell clustering and cluster addressing.

Cores sit on a W x H rectangular grid whose even columns are shifted up by
half a cell, which makes every core touch up to six others.  Physical id is
row-major ``y * W + x``; axial coordinates are ``q = x, r = y - x // 2``.

Heads are the cells with ``(q + 3r) % 7 == 0``.  That lattice tiles the
plane with 7-cell flowers: every closed neighbourhood holds exactly one head,
so each core's head is either itself or one of its neighbours.  Near the
grid border that head may fall outside the grid; such a core has no head of
its own and reaches memory through a proxy.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Iterable

# slot order from the head: E, NE, NW, W, SW, SE
DIRECTIONS: tuple[tuple[int, int], ...] = ((1, 0), (1, -1), (0, -1), (-1, 0), (-1, 1), (0, 1))
SLOT_BITS = 3


class TopologyError(ValueError):
    pass


class InvalidCoreId(TopologyError):
    pass


class MalformedAddress(TopologyError):
    pass


class NoProxyAvailable(TopologyError):
    pass


class MemberClass(Enum):
    HEAD = "Head"
    ORDINARY = "Ordinary"
    CORRESPONDING = "Corresponding"
    EXTERNAL = "External"
    PHANTOM = "Phantom"


@dataclass(frozen=True)
class GridConfig:
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise TopologyError(f"grid must be at least 1x1, got {self.width}x{self.height}")

    @classmethod
    def parse(cls, text: str) -> "GridConfig":
        try:
            w, h = text.lower().split("x")
            return cls(int(w), int(h))
        except ValueError:
            raise TopologyError(f"grid must look like WxH, got {text!r}") from None

    @property
    def size(self) -> int:
        return self.width * self.height

    def __str__(self) -> str:
        return f"{self.width}x{self.height}"

    def check(self, core: int) -> None:
        if not isinstance(core, int) or not 0 <= core < self.size:
            raise InvalidCoreId(f"core {core!r} not in grid {self}")

    def xy(self, core: int) -> tuple[int, int]:
        return core % self.width, core // self.width

    def core_at(self, x: int, y: int) -> int | None:
        if 0 <= x < self.width and 0 <= y < self.height:
            return y * self.width + x
        return None


@dataclass(frozen=True, order=True)
class HexCoord:
    q: int
    r: int

    def __add__(self, other: tuple[int, int]) -> "HexCoord":
        dq, dr = other
        return HexCoord(self.q + dq, self.r + dr)

    def distance(self, other: "HexCoord") -> int:
        dq, dr = self.q - other.q, self.r - other.r
        return (abs(dq) + abs(dr) + abs(dq + dr)) // 2

    def neighbors(self) -> list["HexCoord"]:
        return [self + d for d in DIRECTIONS]

    @property
    def is_head(self) -> bool:
        return (self.q + 3 * self.r) % 7 == 0

    def head(self) -> "HexCoord":
        """The unique head cell within distance 1."""
        if self.is_head:
            return self
        for cell in self.neighbors():
            if cell.is_head:
                return cell
        raise AssertionError("head tiling broken")  # unreachable: tiling is perfect

    def offset(self) -> tuple[int, int]:
        return self.q, self.r + self.q // 2

    @classmethod
    def from_offset(cls, x: int, y: int) -> "HexCoord":
        return cls(x, y - x // 2)


def hex_of(core: int, grid: GridConfig) -> HexCoord:
    grid.check(core)
    return HexCoord.from_offset(*grid.xy(core))


def core_of(cell: HexCoord, grid: GridConfig) -> int | None:
    return grid.core_at(*cell.offset())


def hex_distance(a: int, b: int, grid: GridConfig) -> int:
    return hex_of(a, grid).distance(hex_of(b, grid))


def neighbors(core: int, grid: GridConfig) -> frozenset[int]:
    """Hex neighbours of ``core`` that physically exist."""
    cell = hex_of(core, grid)
    found = (core_of(n, grid) for n in cell.neighbors())
    return frozenset(c for c in found if c is not None)


@dataclass(frozen=True, order=True)
class ClusterAddress:
    cluster_id: int
    member_slot: int

    def __str__(self) -> str:
        return f"{self.cluster_id}.{self.member_slot}"


@dataclass(frozen=True)
class Cluster:
    cluster_id: int
    center: HexCoord
    # slot -> physical core, None for phantom slots
    slots: tuple[int | None, ...]

    @property
    def head(self) -> int | None:
        return self.slots[0]

    @property
    def members(self) -> list[int]:
        return [c for c in self.slots if c is not None]

    @property
    def phantom_slots(self) -> list[int]:
        return [i for i, c in enumerate(self.slots) if c is None]


class Clustering:
    """Partition of a grid into flowers plus the address map.

    Built by :func:`build_clusters`; immutable afterwards.
    """

    def __init__(self, grid: GridConfig, clusters: list[Cluster]):
        self.grid = grid
        self.clusters: tuple[Cluster, ...] = tuple(clusters)
        addr: list[ClusterAddress | None] = [None] * grid.size
        for cl in clusters:
            for slot, core in enumerate(cl.slots):
                if core is not None:
                    addr[core] = ClusterAddress(cl.cluster_id, slot)
        self._address: tuple[ClusterAddress, ...] = tuple(addr)  # type: ignore[arg-type]
        self.cluster_bits = max(1, (len(clusters) - 1).bit_length())
        self._adjacent = tuple(tuple(sorted(neighbors(c, grid))) for c in range(grid.size))

    def __repr__(self) -> str:
        return f"Clustering({self.grid}, {len(self.clusters)} clusters)"

    @cached_property
    def heads(self) -> tuple[int, ...]:
        """Physical cluster heads in id order."""
        return tuple(sorted(c.head for c in self.clusters if c.head is not None))

    def is_head(self, core: int) -> bool:
        return self.address_of(core).member_slot == 0

    def address_of(self, core: int) -> ClusterAddress:
        self.grid.check(core)
        return self._address[core]

    def cluster_of(self, core: int) -> Cluster:
        return self.clusters[self.address_of(core).cluster_id]

    def head_of(self, core: int) -> int | None:
        """Physical head of ``core``'s cluster, or None if it is off-grid."""
        return self.cluster_of(core).head

    def hex(self, core: int) -> HexCoord:
        return hex_of(core, self.grid)

    def distance(self, a: int, b: int) -> int:
        return hex_distance(a, b, self.grid)

    def neighbors(self, core: int) -> tuple[int, ...]:
        """Existing hex neighbours in ascending id order."""
        return self._adjacent[core]

    def encode(self, address: ClusterAddress) -> int:
        return encode_address(address, self)

    def decode(self, value: int) -> ClusterAddress:
        return decode_address(value, self)

    def core_for(self, address: ClusterAddress) -> int | None:
        """Physical core behind an address; None for phantom slots."""
        if not 0 <= address.cluster_id < len(self.clusters) or not 0 <= address.member_slot < 7:
            raise MalformedAddress(f"no such address {address}")
        return self.clusters[address.cluster_id].slots[address.member_slot]

    def extended_cluster(self, head: int) -> dict[HexCoord, MemberClass]:
        """Every position within distance 2 of ``head`` with its class.

        Off-grid positions are reported as phantom; the non-phantom entries
        number at most 1 + 6 + 12.
        """
        centre = self.hex(head)
        if not centre.is_head:
            raise TopologyError(f"core {head} is not a cluster head")
        out: dict[HexCoord, MemberClass] = {}
        for dq in range(-2, 3):
            for dr in range(-2, 3):
                cell = HexCoord(centre.q + dq, centre.r + dr)
                if centre.distance(cell) > 2:
                    continue
                core = core_of(cell, self.grid)
                out[cell] = MemberClass.PHANTOM if core is None else classify(core, head, self)
        return out

    def extended_members(self, head: int) -> list[int]:
        members = []
        for cell, cls in self.extended_cluster(head).items():
            if cls is not MemberClass.PHANTOM:
                members.append(core_of(cell, self.grid))
        return sorted(members)


def build_clusters(grid: GridConfig) -> Clustering:
    """Tile ``grid`` into flowers.

    Every flower with at least one physical cell becomes a cluster, its
    off-grid cells kept as phantom slots.  Clusters are numbered by the
    row-major offset position of their centre, which may lie off-grid.
    """
    centres: dict[HexCoord, list[int | None]] = {}
    for core in range(grid.size):
        cell = hex_of(core, grid)
        centre = cell.head()
        if centre not in centres:
            slots: list[int | None] = [core_of(centre, grid)]
            slots.extend(core_of(centre + d, grid) for d in DIRECTIONS)
            centres[centre] = slots
    ordered = sorted(centres, key=lambda c: (c.offset()[1], c.offset()[0]))
    clusters = [Cluster(i, c, tuple(centres[c])) for i, c in enumerate(ordered)]
    return Clustering(grid, clusters)


def classify(core: int, head: int, clustering: Clustering) -> MemberClass | None:
    """Role of ``core`` within the extended cluster centred on ``head``.

    Returns None when ``core`` lies further than two steps from ``head``.
    """
    grid = clustering.grid
    a, h = hex_of(core, grid), hex_of(head, grid)
    if not h.is_head:
        raise TopologyError(f"core {head} is not a cluster head")
    d = a.distance(h)
    if d == 0:
        return MemberClass.HEAD
    if d == 1:
        return MemberClass.ORDINARY
    if d == 2:
        own = clustering.head_of(core)
        return MemberClass.CORRESPONDING if own is not None else MemberClass.EXTERNAL
    return None


def encode_address(address: ClusterAddress, clustering: Clustering) -> int:
    """Pack an address as ``cluster_id << 3 | member_slot``."""
    if not 0 <= address.member_slot < 7:
        raise MalformedAddress(f"member slot {address.member_slot} outside 0..6")
    if not 0 <= address.cluster_id < len(clustering.clusters):
        raise MalformedAddress(f"cluster {address.cluster_id} does not exist")
    return address.cluster_id << SLOT_BITS | address.member_slot


def decode_address(value: int, clustering: Clustering) -> ClusterAddress:
    if value < 0 or value >> (SLOT_BITS + clustering.cluster_bits):
        raise MalformedAddress(f"{value} exceeds the address width")
    slot = value & ((1 << SLOT_BITS) - 1)
    cluster = value >> SLOT_BITS
    if slot == 7 or cluster >= len(clustering.clusters):
        raise MalformedAddress(f"{value} does not name a cluster slot")
    return ClusterAddress(cluster, slot)


def bfs_distances(
    start: int, clustering: Clustering, blocked: Iterable[int] = (), allowed: set[int] | None = None
) -> dict[int, int]:
    """Hex-adjacency hop counts from ``start``; blocked cores are not entered."""
    blocked = set(blocked)
    dist = {start: 0}
    todo = deque([start])
    while todo:
        cur = todo.popleft()
        for nxt in clustering.neighbors(cur):
            if nxt in dist or nxt in blocked or (allowed is not None and nxt not in allowed):
                continue
            dist[nxt] = dist[cur] + 1
            todo.append(nxt)
    return dist


def proxy_for(
    core: int,
    clustering: Clustering,
    head: int | None = None,
    denied: Iterable[int] = (),
) -> int:
    """First core to hand traffic to on the way from ``core`` to ``head``.

    ``head`` defaults to the core's own head, or when that is missing or
    denied, the nearest live head.  The result is adjacent to ``core`` and
    one step closer to the head; ties go to the lowest id.
    """
    denied = frozenset(denied)
    clustering.grid.check(core)
    if head is None:
        head = gateway_head(core, clustering, denied)
    if core == head:
        raise TopologyError(f"core {core} is itself the head")
    dist = bfs_distances(head, clustering, blocked=denied - {head})
    candidates = [n for n in clustering.neighbors(core) if n in dist]
    if not candidates:
        raise NoProxyAvailable(f"core {core} has no live neighbour toward head {head}")
    best = min(dist[n] for n in candidates)
    return min(n for n in candidates if dist[n] == best)


def gateway_head(core: int, clustering: Clustering, denied: Iterable[int] = ()) -> int:
    """Head that carries ``core``'s memory traffic.

    Its own head when that exists and is live; otherwise the live head
    nearest by hex hops (lowest id on ties).
    """
    denied = frozenset(denied)
    own = clustering.head_of(core)
    if own is not None and own not in denied:
        return own
    dist = bfs_distances(core, clustering, blocked=denied)
    live = [(d, c) for c, d in dist.items() if clustering.is_head(c) and c not in denied]
    if not live:
        raise NoProxyAvailable(f"core {core} cannot reach any live cluster head")
    return min(live)[1]


def topology_rows(clustering: Clustering) -> list[dict]:
    """One record per core, used by the ``topology`` CLI dump."""
    rows = []
    for core in range(clustering.grid.size):
        x, y = clustering.grid.xy(core)
        cell = clustering.hex(core)
        addr = clustering.address_of(core)
        head = clustering.head_of(core)
        if head is None:
            cls = MemberClass.EXTERNAL
        else:
            cls = classify(core, head, clustering)
        row = {
            "id": core,
            "x": x,
            "y": y,
            "q": cell.q,
            "r": cell.r,
            "cluster": addr.cluster_id,
            "slot": addr.member_slot,
            "address": clustering.encode(addr),
            "class": cls.value,
        }
        if addr.member_slot == 0:
            row["extended_size"] = len(clustering.extended_members(core))
        rows.append(row)
    return rows
