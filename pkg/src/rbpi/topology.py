"""Road network model: hub nodes, directed road edges, carrier domains.

The graph is immutable after load and safe to share. Logical 32-bit node
addresses split into a carrier-domain part (high 16 bits) and a local part
(low 16 bits).
"""

from __future__ import annotations

from dataclasses import dataclass, field

CAPABILITY_PRINTER_3D = "printer_3d"
CAPABILITY_REFUEL = "refuel"
CAPABILITY_CONTAINER_POWER = "container_power"

KNOWN_CAPABILITIES = frozenset(
    {CAPABILITY_PRINTER_3D, CAPABILITY_REFUEL, CAPABILITY_CONTAINER_POWER})


def make_address(domain: int, local: int) -> int:
    """32-bit logical address: carrier domain in the high half, local id low."""
    if not 0 <= domain < (1 << 16):
        raise ValueError(f"domain id {domain} out of 16-bit range")
    if not 0 <= local < (1 << 16):
        raise ValueError(f"local id {local} out of 16-bit range")
    return (domain << 16) | local


def address_domain(address: int) -> int:
    return (address >> 16) & 0xFFFF


def address_local(address: int) -> int:
    return address & 0xFFFF


@dataclass(frozen=True)
class PiNode:
    """A hub: stores freight, routes containers, offers optional services."""

    id: int
    address: int
    storage_capacity: float   # kilograms
    occupancy_threshold: float = 0.8
    capabilities: frozenset[str] = frozenset()
    domain: int = 0

    def has(self, capability: str) -> bool:
        return capability in self.capabilities


@dataclass(frozen=True)
class RoadEdge:
    """One directed road link between two hubs."""

    from_node: int
    to_node: int
    distance: float   # kilometers
    speed: float      # kilometers/hour

    @property
    def key(self) -> tuple[int, int]:
        return (self.from_node, self.to_node)


@dataclass(frozen=True)
class CarrierDomain:
    """One carrier's hub set; domains partition the node set."""

    id: int
    member_nodes: frozenset[int]


@dataclass
class RoadGraph:
    nodes: dict[int, PiNode] = field(default_factory=dict)
    edges: dict[tuple[int, int], RoadEdge] = field(default_factory=dict)
    domains: dict[int, CarrierDomain] = field(default_factory=dict)

    def node_by_address(self, address: int) -> PiNode | None:
        for nid in sorted(self.nodes):
            if self.nodes[nid].address == address:
                return self.nodes[nid]
        return None

    def edge(self, from_node: int, to_node: int) -> RoadEdge | None:
        return self.edges.get((from_node, to_node))


def build_graph(nodes: list[PiNode], edges: list[RoadEdge],
                domains: list[CarrierDomain] | None = None) -> RoadGraph:
    """Assemble a graph; derives domains from node fields when not given."""
    graph = RoadGraph()
    for node in nodes:
        graph.nodes[node.id] = node
    for edge in edges:
        graph.edges[edge.key] = edge
    if domains is None:
        members: dict[int, set[int]] = {}
        for node in nodes:
            members.setdefault(node.domain, set()).add(node.id)
        domains = [CarrierDomain(id=d, member_nodes=frozenset(m))
                   for d, m in sorted(members.items())]
    for dom in domains:
        graph.domains[dom.id] = dom
    return graph


@dataclass(frozen=True)
class Violation:
    """One graph invariant breach, with a stable machine-readable code."""

    code: str
    detail: str

    def __str__(self) -> str:
        return f"{self.code}: {self.detail}"


def validate_graph(graph: RoadGraph) -> list[Violation]:
    """Check every structural invariant; empty list means the graph is valid.

    Weak-connectivity failures are reported with code GRAPH_DISCONNECTED but
    are warnings by convention: callers may choose to proceed.
    """
    violations: list[Violation] = []
    seen_addresses: dict[int, int] = {}
    for nid in sorted(graph.nodes):
        node = graph.nodes[nid]
        if node.storage_capacity <= 0:
            violations.append(Violation(
                "NODE_BAD_STORAGE", f"node {nid} storage_capacity {node.storage_capacity} <= 0"))
        if not 0 < node.occupancy_threshold <= 1:
            violations.append(Violation(
                "NODE_BAD_THRESHOLD",
                f"node {nid} occupancy_threshold {node.occupancy_threshold} outside (0, 1]"))
        if node.address in seen_addresses:
            violations.append(Violation(
                "NODE_DUP_ADDRESS",
                f"node {nid} address {node.address:#010x} already used by node "
                f"{seen_addresses[node.address]}"))
        else:
            seen_addresses[node.address] = nid
        unknown = node.capabilities - KNOWN_CAPABILITIES
        if unknown:
            violations.append(Violation(
                "NODE_UNKNOWN_CAPABILITY",
                f"node {nid} capabilities {sorted(unknown)} not recognized"))
        if node.domain not in graph.domains:
            violations.append(Violation(
                "NODE_UNKNOWN_DOMAIN", f"node {nid} domain {node.domain} not declared"))

    for key in sorted(graph.edges):
        edge = graph.edges[key]
        for endpoint in (edge.from_node, edge.to_node):
            if endpoint not in graph.nodes:
                violations.append(Violation(
                    "EDGE_UNKNOWN_NODE",
                    f"edge {edge.from_node}->{edge.to_node} references missing node {endpoint}"))
        if edge.from_node == edge.to_node:
            violations.append(Violation(
                "EDGE_SELF_LOOP", f"edge {edge.from_node}->{edge.to_node} is a self-loop"))
        if edge.distance <= 0:
            violations.append(Violation(
                "EDGE_BAD_DISTANCE",
                f"edge {edge.from_node}->{edge.to_node} distance {edge.distance} <= 0"))
        if edge.speed <= 0:
            violations.append(Violation(
                "EDGE_BAD_SPEED",
                f"edge {edge.from_node}->{edge.to_node} speed {edge.speed} <= 0"))

    # Domains must partition the node set.
    assigned: dict[int, int] = {}
    for did in sorted(graph.domains):
        for member in sorted(graph.domains[did].member_nodes):
            if member not in graph.nodes:
                violations.append(Violation(
                    "DOMAIN_UNKNOWN_NODE", f"domain {did} lists missing node {member}"))
            elif member in assigned:
                violations.append(Violation(
                    "DOMAIN_OVERLAP",
                    f"node {member} belongs to domains {assigned[member]} and {did}"))
            else:
                assigned[member] = did
    for nid in sorted(graph.nodes):
        if nid not in assigned:
            violations.append(Violation(
                "DOMAIN_UNASSIGNED", f"node {nid} belongs to no domain"))
        elif graph.nodes[nid].domain != assigned[nid]:
            violations.append(Violation(
                "DOMAIN_MISMATCH",
                f"node {nid} declares domain {graph.nodes[nid].domain} but domain "
                f"{assigned[nid]} lists it"))

    if graph.nodes and not _weakly_connected(graph):
        violations.append(Violation(
            "GRAPH_DISCONNECTED", "graph is not weakly connected"))
    return violations


def _weakly_connected(graph: RoadGraph) -> bool:
    undirected: dict[int, set[int]] = {nid: set() for nid in graph.nodes}
    for (a, b) in graph.edges:
        if a in undirected and b in undirected:
            undirected[a].add(b)
            undirected[b].add(a)
    start = min(graph.nodes)
    seen = {start}
    stack = [start]
    while stack:
        for nxt in undirected[stack.pop()]:
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return len(seen) == len(graph.nodes)


def travel_time(edge: RoadEdge) -> float:
    """Traversal duration in hours."""
    return edge.distance / edge.speed


def neighbors(graph: RoadGraph, node_id: int) -> list[tuple[RoadEdge, int]]:
    """Outgoing (edge, destination) pairs in ascending destination-id order."""
    if node_id not in graph.nodes:
        raise KeyError(f"unknown node id {node_id}")
    out = [(edge, to) for (frm, to), edge in graph.edges.items() if frm == node_id]
    out.sort(key=lambda pair: pair[1])
    return out
