"""Dynamic routing tables maintained by three internet-style strategies.

Three selectable strategies keep per-hub tables current:

* ``rip``  - distance vector: fewest interconnected hubs wins, blind to
  whether any vehicle on the route has free capacity.
* ``ospf`` - link state inside one carrier domain: shortest travel time,
  with the bottleneck free capacity of the chosen path recorded.
* ``bgp``  - path vector across domains: hubs swap candidate routes with
  themselves prepended, dropping anything that would loop, and capping the
  learned free capacity at the bandwidth of the connecting road.

Bandwidth here is the aggregate free carrying mass of vehicles scheduled on
a road within a lookahead window; vehicles report it after every load and
unload, and the reports refresh matching table entries (the capacity
feedback loop).
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable

from .codec import NEXT_HEADER_CONNECTION_ORIENTED, PiDatagramHeader
from .topology import CarrierDomain, RoadGraph, neighbors, travel_time

RIP_INFINITY = 16  # hop count meaning "unreachable"

STRATEGY_RIP = "rip"
STRATEGY_OSPF = "ospf"
STRATEGY_BGP = "bgp"
STRATEGIES = (STRATEGY_RIP, STRATEGY_OSPF, STRATEGY_BGP)

# Strategies whose next-hop selection honors free capacity.
CAPACITY_AWARE = frozenset({STRATEGY_OSPF, STRATEGY_BGP})

BandwidthFn = Callable[[tuple[int, int]], float]


@dataclass
class RouteEntry:
    """One known way to reach a destination address from a table's owner."""

    destination: int
    next_hop: int
    hop_count: int
    path: tuple[int, ...] = ()
    free_capacity: float = 0.0
    updated_at: float = 0.0

    def __post_init__(self):
        if self.hop_count > RIP_INFINITY:
            raise ValueError(f"hop_count {self.hop_count} exceeds cap {RIP_INFINITY}")
        if len(set(self.path)) != len(self.path):
            raise ValueError(f"path {self.path} repeats a node")
        if self.free_capacity < 0:
            raise ValueError(f"free_capacity {self.free_capacity} negative")

    @property
    def reachable(self) -> bool:
        return self.hop_count < RIP_INFINITY


@dataclass
class CapacityReport:
    """A vehicle's free-capacity feedback toward its next scheduled road."""

    mover: int
    edge: tuple[int, int] | None
    departure_time: float
    free_capacity: float

    def __post_init__(self):
        if self.free_capacity < 0:
            raise ValueError(f"free_capacity {self.free_capacity} negative")


@dataclass
class RoutingTable:
    """Per-hub routing knowledge: all candidates plus the default best."""

    owner: int
    address: int
    strategy: str = STRATEGY_RIP
    entries: dict[int, RouteEntry] = field(default_factory=dict)
    candidates: dict[int, list[RouteEntry]] = field(default_factory=dict)
    last_report: dict[tuple[int, int], float] = field(default_factory=dict)

    def recompute_entries(self) -> None:
        """Refresh the best-entry map from the candidate lists."""
        self.entries = {}
        for dest in sorted(self.candidates):
            cands = self.candidates[dest]
            if cands:
                self.entries[dest] = min(
                    cands, key=lambda e: (e.hop_count, e.next_hop, e.path))

    def add_candidate(self, entry: RouteEntry) -> bool:
        """Install ``entry``, keeping one candidate per (destination, next hop).

        An incoming entry replaces the incumbent when it is strictly better
        by (hop count, path) or refreshes it when identical apart from
        capacity. Returns True when anything changed.
        """
        cands = self.candidates.setdefault(entry.destination, [])
        for i, existing in enumerate(cands):
            if existing.next_hop != entry.next_hop:
                continue
            if (entry.hop_count, entry.path) < (existing.hop_count, existing.path):
                cands[i] = entry
                return True
            if (entry.hop_count, entry.path) == (existing.hop_count, existing.path):
                changed = existing.free_capacity != entry.free_capacity
                cands[i] = entry
                return changed
            return False
        cands.append(entry)
        cands.sort(key=lambda e: (e.hop_count, e.next_hop, e.path))
        return True

    def route_summary(self) -> dict[int, tuple[int, int]]:
        """(next_hop, hop_count) per destination; convergence fingerprint."""
        return {d: (e.next_hop, e.hop_count) for d, e in self.entries.items()}


def make_table(owner: int, address: int, strategy: str, now: float = 0.0) -> RoutingTable:
    """Fresh table knowing only its own hub (hop 0, unlimited capacity)."""
    table = RoutingTable(owner=owner, address=address, strategy=strategy)
    self_entry = RouteEntry(
        destination=address, next_hop=owner, hop_count=0, path=(owner,),
        free_capacity=math.inf, updated_at=now)
    table.candidates[address] = [self_entry]
    table.recompute_entries()
    return table


def rip_step(table: RoutingTable, neighbor_tables: list[RoutingTable],
             now: float = 0.0) -> RoutingTable:
    """One synchronous distance-vector sweep at a single hub.

    Each neighbor advertises its best entries; the new hop count per
    destination is one more than the cheapest advertisement, pegged at
    RIP_INFINITY. Capacity plays no part. Pure: the input table is
    untouched and a converged table is a fixed point.
    """
    new = RoutingTable(owner=table.owner, address=table.address,
                       strategy=table.strategy,
                       last_report=dict(table.last_report))

    def install(entry: RouteEntry) -> None:
        # Reuse the old entry object when nothing changed, so a converged
        # table round-trips identically.
        for old in table.candidates.get(entry.destination, []):
            if old.next_hop == entry.next_hop and old.hop_count == entry.hop_count:
                new.add_candidate(old)
                return
        new.add_candidate(entry)

    install(RouteEntry(destination=table.address, next_hop=table.owner,
                       hop_count=0, path=(table.owner,),
                       free_capacity=math.inf, updated_at=now))
    for nt in sorted(neighbor_tables, key=lambda t: t.owner):
        for dest in sorted(nt.entries):
            adv = nt.entries[dest]
            if dest == table.address:
                continue
            install(RouteEntry(
                destination=dest, next_hop=nt.owner,
                hop_count=min(adv.hop_count + 1, RIP_INFINITY),
                updated_at=now))
    new.recompute_entries()
    return new


def rip_converge(graph: RoadGraph, now: float = 0.0,
                 max_sweeps: int | None = None) -> dict[int, RoutingTable]:
    """Synchronous sweeps from scratch until a fixed point.

    On a static graph this needs at most one sweep per node.
    """
    tables = {nid: make_table(nid, graph.nodes[nid].address, STRATEGY_RIP, now)
              for nid in sorted(graph.nodes)}
    out_neighbors = {nid: [m for _, m in neighbors(graph, nid)]
                     for nid in sorted(graph.nodes)}
    sweeps = max_sweeps if max_sweeps is not None else max(1, len(graph.nodes))
    for _ in range(sweeps):
        new_tables = {
            nid: rip_step(tables[nid], [tables[m] for m in out_neighbors[nid]], now)
            for nid in sorted(graph.nodes)
        }
        if all(new_tables[n].route_summary() == tables[n].route_summary()
               for n in tables):
            return new_tables
        tables = new_tables
    return tables


def _dijkstra(graph: RoadGraph, source: int, members: frozenset[int]
              ) -> dict[int, tuple[float, tuple[int, ...]]]:
    """Shortest travel-time paths within ``members``; ties break on the
    lexicographically smallest node-id path, so equal-cost routes resolve
    to the lowest next-hop id."""
    best: dict[int, tuple[float, tuple[int, ...]]] = {}
    heap: list[tuple[float, tuple[int, ...]]] = [(0.0, (source,))]
    while heap:
        cost, path = heapq.heappop(heap)
        node = path[-1]
        if node in best:
            continue
        best[node] = (cost, path)
        for edge, nxt in neighbors(graph, node):
            if nxt in best or nxt not in members or nxt in path:
                continue
            heapq.heappush(heap, (cost + travel_time(edge), path + (nxt,)))
    return best


def ospf_recompute(domain: CarrierDomain, graph: RoadGraph,
                   bandwidth: BandwidthFn | None = None,
                   now: float = 0.0) -> dict[int, RoutingTable]:
    """Link-state tables for every member hub of one carrier domain.

    Weights are edge travel times over intra-domain roads only. When a
    bandwidth function is supplied, each entry records the bottleneck free
    capacity along its path.
    """
    tables: dict[int, RoutingTable] = {}
    for source in sorted(domain.member_nodes):
        table = make_table(source, graph.nodes[source].address, STRATEGY_OSPF, now)
        for dest, (_, path) in sorted(_dijkstra(graph, source, domain.member_nodes).items()):
            if dest == source:
                continue
            capacity = 0.0
            if bandwidth is not None:
                capacity = min(bandwidth((path[i], path[i + 1]))
                               for i in range(len(path) - 1))
            table.add_candidate(RouteEntry(
                destination=graph.nodes[dest].address,
                next_hop=path[1],
                hop_count=min(len(path) - 1, RIP_INFINITY),
                path=path,
                free_capacity=capacity,
                updated_at=now))
        table.recompute_entries()
        tables[source] = table
    return tables


def _learn(learner: RoutingTable, advertiser: RoutingTable,
           edge_capacity: float, now: float) -> RoutingTable:
    updated = RoutingTable(
        owner=learner.owner, address=learner.address, strategy=learner.strategy,
        candidates={d: list(c) for d, c in learner.candidates.items()},
        last_report=dict(learner.last_report))
    for dest in sorted(advertiser.candidates):
        for adv in advertiser.candidates[dest]:
            if not adv.reachable:
                continue
            if learner.owner in adv.path:
                continue  # path-vector loop prevention
            updated.add_candidate(RouteEntry(
                destination=dest,
                next_hop=advertiser.owner,
                hop_count=min(adv.hop_count + 1, RIP_INFINITY),
                path=(learner.owner,) + adv.path,
                free_capacity=min(adv.free_capacity, edge_capacity),
                updated_at=now))
    updated.recompute_entries()
    return updated


def bgp_exchange(a: RoutingTable, b: RoutingTable, graph: RoadGraph,
                 bandwidth: BandwidthFn | None = None,
                 now: float = 0.0) -> tuple[RoutingTable, RoutingTable]:
    """Swap candidate routes between two adjacent hubs, path-vector style.

    Each side learns the other's candidates with itself prepended to the
    path; anything already containing the learner is discarded. A learned
    entry's free capacity never exceeds the connecting road's bandwidth.
    """
    edge_ab = graph.edge(a.owner, b.owner)
    edge_ba = graph.edge(b.owner, a.owner)
    if edge_ab is None and edge_ba is None:
        raise ValueError(f"hubs {a.owner} and {b.owner} are not adjacent")

    def capacity(edge) -> float:
        if bandwidth is None:
            return math.inf
        return bandwidth(edge.key)

    new_a = _learn(a, b, capacity(edge_ab), now) if edge_ab is not None else a
    new_b = _learn(b, a, capacity(edge_ba), now) if edge_ba is not None else b
    return new_a, new_b


def bgp_converge(graph: RoadGraph, bandwidth: BandwidthFn | None = None,
                 now: float = 0.0) -> dict[int, RoutingTable]:
    """Intra-domain link-state seeding, then pairwise exchanges to a fixed
    point (bounded by the node count)."""
    tables: dict[int, RoutingTable] = {}
    for did in sorted(graph.domains):
        for nid, table in ospf_recompute(graph.domains[did], graph,
                                         bandwidth, now).items():
            table.strategy = STRATEGY_BGP
            tables[nid] = table
    pairs = sorted({tuple(sorted(key)) for key in graph.edges})
    for _ in range(max(1, len(graph.nodes))):
        changed = False
        for u, v in pairs:
            before = (_fingerprint(tables[u]), _fingerprint(tables[v]))
            tables[u], tables[v] = bgp_exchange(
                tables[u], tables[v], graph, bandwidth, now)
            if (_fingerprint(tables[u]), _fingerprint(tables[v])) != before:
                changed = True
        if not changed:
            break
    return tables


def _fingerprint(table: RoutingTable) -> tuple:
    return tuple(
        (dest, e.next_hop, e.hop_count, e.path, e.free_capacity)
        for dest in sorted(table.candidates)
        for e in table.candidates[dest])


@dataclass(frozen=True)
class ScheduledDeparture:
    """Snapshot of one planned vehicle departure for bandwidth queries."""

    mover: int
    edge: tuple[int, int]
    depart: float
    capacity: float
    load: float


def edge_bandwidth(schedule: Iterable[ScheduledDeparture],
                   edge: tuple[int, int],
                   window: tuple[float, float]) -> float:
    """Free mass departing ``edge`` within ``[start, end)`` of ``window``."""
    start, end = window
    if start > end:
        raise ValueError(f"window start {start} after end {end}")
    return sum(max(0.0, d.capacity - d.load)
               for d in schedule
               if d.edge == edge and start <= d.depart < end)


def apply_capacity_report(table: RoutingTable, report: CapacityReport) -> RoutingTable:
    """Refresh free capacity on entries that forward over the reported road.

    Reports compete on departure time: a report older than one already
    applied for the same road is ignored.
    """
    edge = report.edge
    if edge is None or edge[0] != table.owner:
        return table
    if table.last_report.get(edge, -math.inf) > report.departure_time:
        return table
    table.last_report[edge] = report.departure_time
    for dest, cands in table.candidates.items():
        if dest == table.address:
            continue
        for i, entry in enumerate(cands):
            if entry.next_hop == edge[1]:
                cands[i] = replace(entry, free_capacity=report.free_capacity,
                                   updated_at=report.departure_time)
    table.recompute_entries()
    return table


def select_next_hop(table: RoutingTable, header: PiDatagramHeader,
                    pinned_path: tuple[int, ...] | None = None) -> int | None:
    """Pick the forwarding hub for a datagram, or None when no route exists.

    Connection-oriented datagrams follow their pinned path regardless.
    Otherwise: capacity-aware strategies prefer candidates whose free
    capacity covers the payload (falling back to all candidates when none
    qualifies), then fewest hops, then lowest next-hop id.
    """
    if header.next_header == NEXT_HEADER_CONNECTION_ORIENTED and pinned_path:
        if table.owner in pinned_path:
            at = pinned_path.index(table.owner)
            if at + 1 < len(pinned_path):
                return pinned_path[at + 1]
        return None
    candidates = [e for e in table.candidates.get(header.destination, ())
                  if e.reachable]
    if not candidates:
        return None
    if table.strategy in CAPACITY_AWARE:
        qualified = [e for e in candidates
                     if e.free_capacity >= header.payload_length]
        if qualified:
            candidates = qualified
    best = min(candidates, key=lambda e: (e.hop_count, e.next_hop))
    return best.next_hop
