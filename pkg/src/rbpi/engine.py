"""Deterministic discrete-event kernel and scenario orchestration.

Simulation time is fixed-point (integer millihours) so queue ordering never
depends on float rounding. Events pop in (time, priority class, insertion
seq) order; at one instant arrivals complete before departures, and
departures before table exchanges, so capacity reports always reflect
finished handoffs. Randomness comes from one seeded generator split per
subsystem by fixed labels. Running the same config and seed twice yields
identical metrics, byte for byte.
"""

from __future__ import annotations

import enum
import heapq
import random
from dataclasses import dataclass, field, replace

from . import link, physical, routing, transport
from .codec import NEXT_HEADER_CONNECTIONLESS, PiDatagramHeader
from .link import Frame, ReservationRejected
from .physical import AtNode, ContainerEcosystem, PiMover, PlannedLeg, StrandedError
from .routing import RoutingTable, ScheduledDeparture
from .topology import (
    CAPABILITY_CONTAINER_POWER,
    RoadGraph,
    Violation,
    travel_time,
    validate_graph,
)
from .transport import (
    InFlightSegment,
    ReassemblyBuffer,
    ReassemblyStatus,
    RecoveryKind,
    Segment,
    Shipment,
)

MH = 1000  # millihours per hour


def to_mh(hours: float) -> int:
    return round(hours * MH)


def to_hours(time_mh: int) -> float:
    return time_mh / MH


class SchedulingError(RuntimeError):
    """An event was scheduled before the current clock."""


class EventKind(enum.Enum):
    SHIPMENT_RELEASE = "ShipmentRelease"
    MOVER_DEPART = "MoverDepart"
    MOVER_ARRIVE = "MoverArrive"
    NODE_PROCESS = "NodeProcess"
    TABLE_EXCHANGE = "TableExchange"
    CAPACITY_REPORT_DELIVERY = "CapacityReportDelivery"
    INSPECTION_AT_NODE = "InspectionAtNode"
    ECOSYSTEM_TICK = "EcosystemTick"
    HOLD_RELEASE = "HoldRelease"
    LOSS_SCAN = "LossScan"
    RECOVERY_INJECTION = "RecoveryInjection"
    SIMULATION_END = "SimulationEnd"


# Same-instant ordering: arrivals before departures before table exchanges.
PRIORITY = {
    EventKind.MOVER_ARRIVE: 0,
    EventKind.SHIPMENT_RELEASE: 1,
    EventKind.INSPECTION_AT_NODE: 2,
    EventKind.NODE_PROCESS: 3,
    EventKind.RECOVERY_INJECTION: 4,
    EventKind.ECOSYSTEM_TICK: 5,
    EventKind.HOLD_RELEASE: 6,
    EventKind.MOVER_DEPART: 7,
    EventKind.CAPACITY_REPORT_DELIVERY: 8,
    EventKind.TABLE_EXCHANGE: 9,
    EventKind.LOSS_SCAN: 10,
    EventKind.SIMULATION_END: 99,
}


@dataclass
class Event:
    time: int                # millihours
    priority_class: int
    seq: int
    kind: EventKind
    payload: dict


@dataclass
class SimParams:
    """Scenario-tunable knobs with their default values."""

    pallet_mass: float = 500.0
    detection_probability: float = 0.95
    table_exchange_period: float = 1.0
    capacity_window: float = 24.0
    loss_timeout_fraction: float = 0.5
    loss_scan_period: float = 1.0
    max_recovery_attempts: int = 3
    refuel_delay: float = 0.5
    reorder_delay: float = 0.5
    reprint_delay: float = 0.5
    power_tolerance: float = 2.0
    ecosystem_tick: float = 0.25
    default_hop_limit: int = 16
    default_max_unit: int = 1000


@dataclass
class MoverSpec:
    """Declared fleet member: vehicle plus its recurring departure plan."""

    id: int
    capacity: int
    tank_range: float
    home: int
    fuel: float | None = None
    speed_factor: float = 1.0
    legs: list[PlannedLeg] = field(default_factory=list)
    repeat_every: float | None = None


@dataclass
class ScenarioConfig:
    graph: RoadGraph
    movers: list[MoverSpec]
    shipments: list[Shipment]
    strategy: str = routing.STRATEGY_RIP
    params: SimParams = field(default_factory=SimParams)
    seed: int = 0
    end_time: float = 72.0
    # per-shipment segmentation cap, id -> kilograms
    max_units: dict[int, int] = field(default_factory=dict)


def validate_scenario(config: ScenarioConfig) -> list[Violation]:
    """Graph invariants plus fleet/shipment cross-references."""
    violations = list(validate_graph(config.graph))
    graph = config.graph
    if config.strategy not in routing.STRATEGIES:
        violations.append(Violation(
            "STRATEGY_UNKNOWN", f"strategy {config.strategy!r} not one of "
            f"{'/'.join(routing.STRATEGIES)}"))
    if config.end_time <= 0:
        violations.append(Violation("END_TIME_BAD", f"end_time {config.end_time} <= 0"))

    seen_movers: set[int] = set()
    for spec in config.movers:
        label = f"mover {spec.id}"
        if spec.id in seen_movers:
            violations.append(Violation("FLEET_DUP_ID", f"{label} declared twice"))
        seen_movers.add(spec.id)
        if spec.capacity <= 0:
            violations.append(Violation(
                "FLEET_BAD_CAPACITY", f"{label} capacity {spec.capacity} <= 0"))
        if spec.home not in graph.nodes:
            violations.append(Violation(
                "FLEET_UNKNOWN_HOME", f"{label} home node {spec.home} missing"))
            continue
        here = spec.home
        last_depart = 0.0
        for i, leg in enumerate(spec.legs):
            if leg.edge not in graph.edges:
                violations.append(Violation(
                    "FLEET_LEG_UNKNOWN_EDGE",
                    f"{label} leg {i} uses undeclared edge {leg.edge}"))
                continue
            if leg.edge[0] != here:
                violations.append(Violation(
                    "FLEET_LEG_DISCONTINUOUS",
                    f"{label} leg {i} departs node {leg.edge[0]} but mover is at {here}"))
            if leg.depart < last_depart:
                violations.append(Violation(
                    "FLEET_LEG_ORDER",
                    f"{label} leg {i} departs at {leg.depart} before leg {i-1}"))
            edge = graph.edges[leg.edge]
            from_node = graph.nodes.get(leg.edge[0])
            if (edge.distance > spec.tank_range
                    or (from_node is not None and edge.distance > spec.tank_range)):
                violations.append(Violation(
                    "FLEET_LEG_RANGE",
                    f"{label} leg {i} distance {edge.distance} km exceeds tank "
                    f"range {spec.tank_range} km"))
            here = leg.edge[1]
            last_depart = leg.depart
        if spec.repeat_every is not None:
            if spec.repeat_every <= 0:
                violations.append(Violation(
                    "FLEET_BAD_REPEAT", f"{label} repeat_every {spec.repeat_every} <= 0"))
            elif spec.legs and here != spec.home:
                violations.append(Violation(
                    "FLEET_REPEAT_OPEN",
                    f"{label} repeating plan ends at node {here}, not home {spec.home}"))

    addresses = {graph.nodes[n].address for n in graph.nodes}
    seen_shipments: set[int] = set()
    for shipment in config.shipments:
        label = f"shipment {shipment.id}"
        if shipment.id in seen_shipments:
            violations.append(Violation("SHIPMENT_DUP_ID", f"{label} declared twice"))
        seen_shipments.add(shipment.id)
        if shipment.source_address not in addresses:
            violations.append(Violation(
                "SHIPMENT_UNKNOWN_SOURCE",
                f"{label} source address {shipment.source_address:#010x} unknown"))
        if shipment.destination_address not in addresses:
            violations.append(Violation(
                "SHIPMENT_UNKNOWN_DEST",
                f"{label} destination address {shipment.destination_address:#010x} unknown"))
        max_unit = config.max_units.get(shipment.id, config.params.default_max_unit)
        for item in shipment.items:
            if item.mass > max_unit:
                violations.append(Violation(
                    "SHIPMENT_ITEM_TOO_HEAVY",
                    f"{label} item {item.id} mass {item.mass} kg exceeds max unit "
                    f"{max_unit} kg"))
        if not 0 <= shipment.treatment <= 255:
            violations.append(Violation(
                "SHIPMENT_BAD_TREATMENT", f"{label} treatment {shipment.treatment} "
                "outside one byte"))

    p = config.params
    if not 0 <= p.detection_probability <= 1:
        violations.append(Violation(
            "PARAM_BAD_DETECTION",
            f"detection_probability {p.detection_probability} outside [0, 1]"))
    if not 0 < p.loss_timeout_fraction <= 1:
        violations.append(Violation(
            "PARAM_BAD_LOSS_FRACTION",
            f"loss_timeout_fraction {p.loss_timeout_fraction} outside (0, 1]"))
    for name in ("pallet_mass", "table_exchange_period", "capacity_window",
                 "loss_scan_period", "ecosystem_tick"):
        if getattr(p, name) <= 0:
            violations.append(Violation(
                "PARAM_NOT_POSITIVE", f"{name} {getattr(p, name)} <= 0"))
    return violations


@dataclass
class SlotState:
    """Lifecycle of one logical segment (shipment slot) across copies."""

    shipment_id: int
    slot: int
    blueprint: Segment          # pristine copy used to mint replacements
    delivered: bool = False
    written_off: bool = False
    attempts: int = 0           # recovery attempts consumed
    recovery_pending: bool = False
    active_frame: str | None = None

    @property
    def key(self) -> tuple[int, int]:
        return (self.shipment_id, self.slot)


@dataclass
class FrameRuntime:
    frame: Frame
    slot_key: tuple[int, int]
    where: tuple[str, int] | None   # ("node", id) | ("mover", id) | None once terminal
    edges_ridden: int = 0


@dataclass
class ShipmentState:
    shipment: Shipment
    released: float
    segments: int = 0
    delivered_segments: int = 0
    completed_at: float | None = None
    acks: int = 0
    pinned_path: tuple[int, ...] | None = None
    next_seq: int = 0


@dataclass
class MoverRuntime:
    mover: PiMover
    departure_scheduled: bool = False
    stranded: bool = False
    traversals: int = 0
    empty_runs: int = 0
    mass_km_loaded: float = 0.0
    mass_km_capacity: float = 0.0


@dataclass
class Ledger:
    """Mass conservation account, balanced at every event boundary."""

    injected: int = 0
    delivered: int = 0
    retired: int = 0

    def snapshot(self, at_nodes: int, aboard: int) -> dict:
        return {
            "injected_kg": self.injected,
            "delivered_kg": self.delivered,
            "retired_kg": self.retired,
            "at_nodes_kg": at_nodes,
            "aboard_kg": aboard,
            "balanced": self.injected == at_nodes + aboard + self.delivered + self.retired,
        }


class ConservationError(AssertionError):
    pass


@dataclass
class Metrics:
    """Observable outcome of one simulation run."""

    shipments: dict = field(default_factory=dict)
    hop_histogram: dict = field(default_factory=dict)
    mover_stats: dict = field(default_factory=dict)
    segments_dispatched: int = 0
    delivered_direct: int = 0
    delivered_after_recovery: int = 0
    write_offs: int = 0
    duplicates: int = 0
    reorders: int = 0
    reprints: int = 0
    hop_limit_drops: int = 0
    damage_detected: int = 0
    cold_chain_breaches: int = 0
    timeout_retirements: int = 0
    holds_issued: int = 0
    ece_flags_set: int = 0
    acks: int = 0
    refuels: int = 0
    stranded_movers: int = 0
    delivered_damaged: int = 0
    on_time_rate: float | None = None
    mean_lead_time: float | None = None
    utilization: float | None = None
    empty_run_ratio: float | None = None
    ledger: dict = field(default_factory=dict)
    trace: list = field(default_factory=list)

    @property
    def delivered_total(self) -> int:
        return self.delivered_direct + self.delivered_after_recovery

    def to_dict(self) -> dict:
        """Canonical, JSON-ready form. The trace stays out of reports."""
        out = {
            "shipments": {str(k): dict(v) for k, v in sorted(self.shipments.items())},
            "hop_histogram": {str(k): v for k, v in sorted(self.hop_histogram.items())},
            "mover_stats": {str(k): dict(v) for k, v in sorted(self.mover_stats.items())},
            "ledger": dict(self.ledger),
        }
        for name in ("segments_dispatched", "delivered_direct",
                     "delivered_after_recovery", "write_offs", "duplicates",
                     "reorders", "reprints", "hop_limit_drops", "damage_detected",
                     "cold_chain_breaches", "timeout_retirements", "holds_issued",
                     "ece_flags_set", "acks", "refuels", "stranded_movers",
                     "delivered_damaged", "on_time_rate", "mean_lead_time",
                     "utilization", "empty_run_ratio"):
            out[name] = getattr(self, name)
        out["delivered_total"] = self.delivered_total
        return out


class Simulation:
    """Single-threaded event kernel driving all protocol layers."""

    def __init__(self, config: ScenarioConfig):
        self.config = config
        self.graph = config.graph
        self.params = config.params
        self.strategy = config.strategy
        self.end_mh = to_mh(config.end_time)

        self.clock = 0
        self._seq = 0
        self.queue: list[tuple[int, int, int, Event]] = []
        self.stopped = False

        self.rng_inspection = random.Random(f"{config.seed}:inspection")

        self.addr_to_node = {self.graph.nodes[n].address: n
                             for n in self.graph.nodes}
        self.tables: dict[int, RoutingTable] = {}

        self.movers: dict[int, MoverRuntime] = {}
        for spec in sorted(config.movers, key=lambda s: s.id):
            legs = self._expand_legs(spec)
            mover = PiMover(
                id=spec.id, capacity=spec.capacity, tank_range=spec.tank_range,
                fuel=spec.fuel, speed_factor=spec.speed_factor,
                location=AtNode(spec.home), schedule=legs)
            self.movers[spec.id] = MoverRuntime(mover=mover)

        self.store: dict[int, list[Frame]] = {n: [] for n in self.graph.nodes}
        self.in_delivery: dict[int, list[Frame]] = {n: [] for n in self.graph.nodes}
        self.occupancy: dict[int, int] = {n: 0 for n in self.graph.nodes}
        self.holding: dict[int, bool] = {n: False for n in self.graph.nodes}
        self.release_pending: set[int] = set()
        self.gated_arrivals: dict[int, list[int]] = {n: [] for n in self.graph.nodes}
        self.held_departures: dict[int, list[int]] = {n: [] for n in self.graph.nodes}

        self.slots: dict[tuple[int, int], SlotState] = {}
        self.loss_registry: dict[tuple[int, int], InFlightSegment] = {}
        self.frames: dict[str, FrameRuntime] = {}
        self.buffers: dict[int, ReassemblyBuffer] = {}
        self.shipment_states: dict[int, ShipmentState] = {}
        self.ecosystems: dict[str, ContainerEcosystem] = {}

        self.metrics = Metrics()
        self.ledger = Ledger()

    # ------------------------------------------------------------------ setup

    def _expand_legs(self, spec: MoverSpec) -> list[PlannedLeg]:
        legs = [PlannedLeg(edge=leg.edge, depart=leg.depart) for leg in spec.legs]
        if spec.repeat_every and spec.legs:
            period = spec.repeat_every
            shift = period
            while shift <= self.config.end_time:
                for leg in spec.legs:
                    legs.append(PlannedLeg(edge=leg.edge, depart=leg.depart + shift))
                shift += period
        return legs

    def _now_h(self) -> float:
        return to_hours(self.clock)

    def _next_event_seq(self) -> int:
        self._seq += 1
        return self._seq

    # ------------------------------------------------------------- scheduling

    def schedule(self, kind: EventKind, time_mh: int, **payload) -> Event:
        if time_mh < self.clock:
            raise SchedulingError(
                f"{kind.value} at {time_mh} mh is before clock {self.clock} mh")
        event = Event(time=time_mh, priority_class=PRIORITY[kind],
                      seq=self._next_event_seq(), kind=kind, payload=payload)
        heapq.heappush(self.queue, (event.time, event.priority_class, event.seq, event))
        return event

    def step(self) -> Event:
        """Process the earliest event; the clock never moves backward."""
        if not self.queue:
            raise RuntimeError("step() on an empty event queue")
        _, _, _, event = heapq.heappop(self.queue)
        assert event.time >= self.clock
        self.clock = event.time
        self._HANDLERS[event.kind](self, event.payload)
        self._post_event()
        return event

    def run(self) -> Metrics:
        self.build_tables()
        self._seed_events()
        while self.queue and not self.stopped:
            if self.queue[0][0] > self.end_mh:
                break
            self.step()
        self._finalize()
        return self.metrics

    def _seed_events(self) -> None:
        for shipment in sorted(self.config.shipments, key=lambda s: s.id):
            self.schedule(EventKind.SHIPMENT_RELEASE, to_mh(shipment.created_at),
                          shipment_id=shipment.id)
        for mid in sorted(self.movers):
            self._maybe_schedule_departure(self.movers[mid])
        period = to_mh(self.params.table_exchange_period)
        t = period
        while t <= self.end_mh:
            self.schedule(EventKind.TABLE_EXCHANGE, t)
            t += period
        scan = to_mh(self.params.loss_scan_period)
        t = scan
        while t <= self.end_mh:
            self.schedule(EventKind.LOSS_SCAN, t)
            t += scan
        if any(item.requires_power
               for s in self.config.shipments for item in s.items):
            tick = to_mh(self.params.ecosystem_tick)
            t = tick
            while t <= self.end_mh:
                self.schedule(EventKind.ECOSYSTEM_TICK, t)
                t += tick
        self.schedule(EventKind.SIMULATION_END, self.end_mh)

    # ---------------------------------------------------------------- routing

    def _departure_snapshot(self) -> list[ScheduledDeparture]:
        """Planned departures with current loads, for bandwidth queries."""
        snapshot: list[ScheduledDeparture] = []
        now = self._now_h()
        for mid in sorted(self.movers):
            runtime = self.movers[mid]
            if runtime.stranded:
                continue
            mover = runtime.mover
            available = now
            for leg in mover.schedule:
                depart = max(leg.depart, available)
                edge = self.graph.edges.get(leg.edge)
                if edge is None:
                    continue
                snapshot.append(ScheduledDeparture(
                    mover=mid, edge=leg.edge, depart=depart,
                    capacity=mover.capacity, load=mover.loaded_mass))
                available = depart + travel_time(edge) / mover.speed_factor
        return snapshot

    def bandwidth_fn(self):
        snapshot = self._departure_snapshot()
        now = self._now_h()
        window = (now, now + self.params.capacity_window)
        return lambda edge_key: routing.edge_bandwidth(snapshot, edge_key, window)

    def build_tables(self) -> None:
        now = self._now_h()
        if self.strategy == routing.STRATEGY_RIP:
            self.tables = routing.rip_converge(self.graph, now)
        elif self.strategy == routing.STRATEGY_OSPF:
            bandwidth = self.bandwidth_fn()
            self.tables = {}
            for did in sorted(self.graph.domains):
                self.tables.update(routing.ospf_recompute(
                    self.graph.domains[did], self.graph, bandwidth, now))
        else:
            self.tables = routing.bgp_converge(self.graph, self.bandwidth_fn(), now)

    def _select_next_hop(self, node: int, segment: Segment) -> int | None:
        pinned = None
        state = self.shipment_states.get(segment.shipment_id)
        if state is not None:
            pinned = state.pinned_path
        return routing.select_next_hop(self.tables[node],
                                       segment.datagram_header, pinned)

    def _plan_pinned_path(self, shipment: Shipment,
                          segments: list[Segment]) -> tuple[int, ...] | None:
        source = self.addr_to_node[shipment.source_address]
        dest = self.addr_to_node[shipment.destination_address]
        probe = PiDatagramHeader(
            version=shipment.container_version,
            traffic_class=shipment.treatment,
            flow_label=shipment.id & 0xFFFFF,
            payload_length=max(seg.mass for seg in segments),
            next_header=NEXT_HEADER_CONNECTIONLESS,
            hop_limit=255,
            source=shipment.source_address,
            destination=shipment.destination_address)
        path = [source]
        current = source
        for _ in range(len(self.graph.nodes)):
            if current == dest:
                return tuple(path)
            nxt = routing.select_next_hop(self.tables[current], probe)
            if nxt is None or nxt in path:
                return None
            path.append(nxt)
            current = nxt
        return tuple(path) if current == dest else None

    # ------------------------------------------------------------ bookkeeping

    def _trace(self, kind: str, **detail) -> None:
        self.metrics.trace.append((self._now_h(), kind, detail))

    def _source_node(self, segment: Segment) -> int:
        return self.addr_to_node[segment.datagram_header.source]

    def _dest_node(self, segment: Segment) -> int:
        return self.addr_to_node[segment.datagram_header.destination]

    def _broadcast(self, report) -> None:
        if report is not None:
            self.schedule(EventKind.CAPACITY_REPORT_DELIVERY, self.clock,
                          report=report)

    def _inject_frame(self, frame: Frame, node: int, slot_key: tuple[int, int]) -> None:
        """Place a freshly created frame into the network at ``node``."""
        runtime = FrameRuntime(frame=frame, slot_key=slot_key, where=("node", node))
        self.frames[frame.id] = runtime
        self.ledger.injected += frame.mass
        dest = self._dest_node(frame.segment)
        if node == dest:
            self.in_delivery[node].append(frame)
        else:
            self.store[node].append(frame)
            self.occupancy[node] += frame.mass
            self._check_hold(node)
        if frame.requires_power:
            self.ecosystems[frame.id] = ContainerEcosystem(
                frame_id=frame.id, requires_power=True,
                tolerance=self.params.power_tolerance)
        self.slots[slot_key].active_frame = frame.id
        self.schedule(EventKind.NODE_PROCESS, self.clock, node=node)

    def _retire_frame(self, frame: Frame, reason: str) -> None:
        """Remove a frame copy from circulation; its mass leaves the network."""
        runtime = self.frames[frame.id]
        where = runtime.where
        if where is not None and where[0] == "node":
            node = where[1]
            if frame in self.store[node]:
                self.store[node].remove(frame)
                self.occupancy[node] -= frame.mass
            elif frame in self.in_delivery[node]:
                self.in_delivery[node].remove(frame)
        elif where is not None and where[0] == "mover":
            mover = self.movers[where[1]].mover
            if frame in mover.load:
                mover.load.remove(frame)
        runtime.where = None
        self.ledger.retired += frame.mass
        self.ecosystems.pop(frame.id, None)
        slot = self.slots[runtime.slot_key]
        if slot.active_frame == frame.id:
            slot.active_frame = None
        self._trace("retired", frame=frame.id, reason=reason)

    def _check_hold(self, node: int) -> None:
        if self.holding[node]:
            return
        signal = link.node_flow_control(
            self.graph.nodes[node], self.occupancy[node], self._now_h())
        if signal is not None:
            self.holding[node] = True
            self.metrics.holds_issued += 1
            self._trace("hold_issued", node=node, reason=signal.reason)

    def _set_ece(self, frame: Frame) -> None:
        header = frame.segment.header
        if not header.flags.ece:
            header.flags = replace(header.flags, ece=True)
            self.metrics.ece_flags_set += 1

    def _maybe_schedule_departure(self, runtime: MoverRuntime) -> None:
        if runtime.departure_scheduled or runtime.stranded:
            return
        mover = runtime.mover
        if not mover.schedule or mover.at_node is None:
            return
        depart_mh = max(to_mh(mover.schedule[0].depart), self.clock)
        runtime.departure_scheduled = True
        self.schedule(EventKind.MOVER_DEPART, depart_mh, mover=mover.id)

    # ----------------------------------------------------------- event logic

    def _on_shipment_release(self, payload: dict) -> None:
        shipment = next(s for s in self.config.shipments
                        if s.id == payload["shipment_id"])
        max_unit = self.config.max_units.get(
            shipment.id, self.params.default_max_unit)
        hop_limit = (shipment.hop_limit if shipment.hop_limit is not None
                     else self.params.default_hop_limit)
        segments = transport.segment_shipment(
            shipment, max_unit, base_seq=0, hop_limit=hop_limit,
            window_size=min(65535, int(self.graph.nodes[
                self.addr_to_node[shipment.destination_address]].storage_capacity)))
        state = ShipmentState(shipment=shipment, released=self._now_h(),
                              segments=len(segments), next_seq=len(segments))
        self.shipment_states[shipment.id] = state
        self.buffers[shipment.id] = ReassemblyBuffer(shipment_id=shipment.id)
        if shipment.connection_oriented:
            state.pinned_path = self._plan_pinned_path(shipment, segments)
        source = self.addr_to_node[shipment.source_address]
        for segment in segments:
            slot = SlotState(shipment_id=shipment.id, slot=segment.slot,
                             blueprint=transport.replacement_segment(
                                 segment, segment.header.sequence_number))
            self.slots[slot.key] = slot
            self.loss_registry[slot.key] = InFlightSegment(
                dispatch_time=self._now_h(), deadline=shipment.deadline)
            frame = link.frame_datagram(segment, self.params.pallet_mass)
            self.metrics.segments_dispatched += 1
            self._inject_frame(frame, source, slot.key)
        self._trace("release", shipment=shipment.id, segments=len(segments))

    def _on_node_process(self, payload: dict) -> None:
        node = payload["node"]
        now = self._now_h()
        # Deliveries first: reassembly, acknowledgement, completion.
        while self.in_delivery[node]:
            frame = self.in_delivery[node].pop(0)
            runtime = self.frames[frame.id]
            runtime.where = None
            segment = frame.segment
            buffer = self.buffers.setdefault(
                segment.shipment_id, ReassemblyBuffer(shipment_id=segment.shipment_id))
            status, items = transport.reassemble(buffer, segment)
            slot = self.slots[runtime.slot_key]
            if status is ReassemblyStatus.DUPLICATE:
                self.metrics.duplicates += 1
                self.ledger.retired += frame.mass
                self.ecosystems.pop(frame.id, None)
                if slot.active_frame == frame.id:
                    slot.active_frame = None
                self._trace("duplicate", frame=frame.id, node=node)
                continue
            slot.delivered = True
            if slot.active_frame == frame.id:
                slot.active_frame = None
            record = self.loss_registry.get(slot.key)
            if record is not None:
                record.delivered = True
            if slot.attempts > 0:
                self.metrics.delivered_after_recovery += 1
            else:
                self.metrics.delivered_direct += 1
            if frame.damaged:
                self.metrics.delivered_damaged += 1
            self.ledger.delivered += frame.mass
            self.ecosystems.pop(frame.id, None)
            hops = runtime.edges_ridden
            self.metrics.hop_histogram[hops] = self.metrics.hop_histogram.get(hops, 0) + 1
            state = self.shipment_states[segment.shipment_id]
            state.delivered_segments += 1
            ack = transport.make_ack(segment, now)
            if ack is not None:
                self.metrics.acks += 1
                state.acks += 1
            if status is ReassemblyStatus.COMPLETE:
                state.completed_at = now
                self._trace("shipment_complete", shipment=segment.shipment_id,
                            items=len(items))
            self._trace("delivered", frame=frame.id, node=node, hops=hops)
        # Forwarding checks: hop exhaustion drops at intermediate hubs.
        for frame in list(self.store[node]):
            segment = frame.segment
            if (node != self._source_node(segment)
                    and segment.datagram_header.hop_limit == 0):
                runtime = self.frames[frame.id]
                self.metrics.hop_limit_drops += 1
                self._trace("hop_limit_drop", frame=frame.id, node=node)
                self._retire_frame(frame, "hop_limit")
                self._begin_recovery(runtime.slot_key, node, cause="hop_limit")

    def _on_mover_depart(self, payload: dict) -> None:
        runtime = self.movers[payload["mover"]]
        runtime.departure_scheduled = False
        mover = runtime.mover
        if runtime.stranded or not mover.schedule or mover.at_node is None:
            return
        node = mover.at_node
        # Drop legs the mover cannot start (it is elsewhere); the validator
        # flags such plans, this keeps the run coherent anyway.
        while mover.schedule and mover.schedule[0].edge[0] != node:
            skipped = mover.schedule.pop(0)
            self._trace("leg_skipped", mover=mover.id, edge=skipped.edge)
        if not mover.schedule:
            return
        leg = mover.schedule[0]
        dest = leg.edge[1]
        now = self._now_h()
        if self.holding[dest]:
            # Flow control: wait here until the destination hub releases.
            self.held_departures[dest].append(mover.id)
            for frame in mover.load:
                self._set_ece(frame)
            for frame in self.store[node]:
                if self._select_next_hop(node, frame.segment) == dest:
                    self._set_ece(frame)
            self._trace("departure_held", mover=mover.id, at=node, toward=dest)
            return
        edge = self.graph.edges[leg.edge]
        node_obj = self.graph.nodes[node]
        # Load everything routed over this edge, in arrival order.
        for frame in list(self.store[node]):
            segment = frame.segment
            if self._select_next_hop(node, segment) != dest:
                continue
            is_source = node == self._source_node(segment)
            if not is_source and segment.datagram_header.hop_limit == 0:
                continue  # NodeProcess will drop it
            grant = link.reserve_cargo_space(mover, frame, now)
            if isinstance(grant, ReservationRejected):
                continue
            self.store[node].remove(frame)
            self.occupancy[node] -= frame.mass
            if not is_source:
                segment.datagram_header.hop_limit -= 1
            report = physical.load_frame(mover, frame, grant, now)
            self.frames[frame.id].where = ("mover", mover.id)
            self._broadcast(report)
        try:
            outcome = physical.depart(mover, edge, node_obj, now,
                                      self.params.refuel_delay)
        except StrandedError:
            self._strand(runtime, node)
            return
        mover.schedule.pop(0)
        if outcome.refueled:
            self.metrics.refuels += 1
        self._trace("depart", mover=mover.id, edge=leg.edge,
                    load=mover.loaded_mass)
        self.schedule(EventKind.MOVER_ARRIVE, to_mh(outcome.arrives_at),
                      mover=mover.id, edge=leg.edge)

    def _strand(self, runtime: MoverRuntime, node: int) -> None:
        """Out of fuel with no pump: freight returns to the hub, mover retires."""
        mover = runtime.mover
        runtime.stranded = True
        runtime.departure_scheduled = False
        mover.schedule.clear()
        for frame in list(mover.load):
            mover.load.remove(frame)
            self.store[node].append(frame)
            self.occupancy[node] += frame.mass
            self.frames[frame.id].where = ("node", node)
        self.metrics.stranded_movers += 1
        self._check_hold(node)
        self._trace("stranded", mover=mover.id, node=node)
        self.schedule(EventKind.NODE_PROCESS, self.clock, node=node)

    def _on_mover_arrive(self, payload: dict) -> None:
        runtime = self.movers[payload["mover"]]
        mover = runtime.mover
        edge = self.graph.edges[payload["edge"]]
        physical.arrive(mover, edge)
        runtime.traversals += 1
        runtime.mass_km_loaded += mover.loaded_mass * edge.distance
        runtime.mass_km_capacity += mover.capacity * edge.distance
        if mover.loaded_mass == 0:
            runtime.empty_runs += 1
        for frame in mover.load:
            self.frames[frame.id].edges_ridden += 1
        node = edge.to_node
        if self.holding[node]:
            self.gated_arrivals[node].append(mover.id)
            for frame in mover.load:
                self._set_ece(frame)
            self._trace("arrival_gated", mover=mover.id, node=node)
            return
        self._complete_arrival(runtime)

    def _complete_arrival(self, runtime: MoverRuntime) -> None:
        mover = runtime.mover
        node = mover.at_node
        node_obj = self.graph.nodes[node]
        now = self._now_h()
        occupancy_fraction = self.occupancy[node] / node_obj.storage_capacity
        unloaded: list[str] = []
        for frame in list(mover.load):
            deliver = self._dest_node(frame.segment) == node
            result = physical.unload_frame(
                mover, frame, node_obj, self.occupancy[node], now, deliver=deliver)
            if not result.unloaded:
                continue  # storage full; rides along
            self.occupancy[node] += result.occupancy_delta
            if deliver:
                self.in_delivery[node].append(frame)
            else:
                self.store[node].append(frame)
            self.frames[frame.id].where = ("node", node)
            unloaded.append(frame.id)
            self._broadcast(result.report)
        self._trace("arrive", mover=mover.id, node=node, unloaded=len(unloaded),
                    occupancy_fraction=occupancy_fraction,
                    threshold=node_obj.occupancy_threshold)
        if unloaded:
            self.schedule(EventKind.INSPECTION_AT_NODE, self.clock,
                          node=node, frames=unloaded)
        self.schedule(EventKind.NODE_PROCESS, self.clock, node=node)
        self._check_hold(node)
        self._maybe_schedule_departure(runtime)

    def _on_inspection(self, payload: dict) -> None:
        node = payload["node"]
        node_obj = self.graph.nodes[node]
        for frame_id in payload["frames"]:
            runtime = self.frames[frame_id]
            if runtime.where != ("node", node):
                continue
            frame = runtime.frame
            result = link.inspect(frame, self.params.detection_probability,
                                  self.rng_inspection)
            if result is link.InspectionResult.OK:
                continue
            self.metrics.damage_detected += 1
            self._trace("damage_detected", frame=frame_id, node=node)
            action = link.handle_damage(frame, node_obj, self.graph)
            self._retire_frame(frame, "damage")
            self._begin_recovery(runtime.slot_key, node, cause="damage",
                                 decided=action)

    def _begin_recovery(self, slot_key: tuple[int, int], locus: int,
                        cause: str, decided=None) -> None:
        """One loss, one recovery decision: reprint, reorder, or write off."""
        slot = self.slots[slot_key]
        if slot.delivered or slot.written_off or slot.recovery_pending:
            return
        slot.attempts += 1
        record = self.loss_registry.get(slot_key)
        if slot.attempts > self.params.max_recovery_attempts:
            slot.written_off = True
            self.metrics.write_offs += 1
            if record is not None:
                record.recovery_pending = True  # terminal; stop loss scans
            self._trace("write_off", slot=slot_key, cause=cause)
            return
        action = decided if decided is not None else transport.recover(
            slot.blueprint, locus, self.graph)
        slot.recovery_pending = True
        if record is not None:
            record.recovery_pending = True
        if action.kind is RecoveryKind.REPRINT:
            self.metrics.reprints += 1
            delay = self.params.reprint_delay
        else:
            self.metrics.reorders += 1
            delay = self.params.reorder_delay
        self._trace("recovery", slot=slot_key, action=action.kind.value,
                    locus=action.locus, cause=cause)
        self.schedule(EventKind.RECOVERY_INJECTION,
                      self.clock + to_mh(delay),
                      slot=slot_key, locus=action.locus)

    def _on_recovery_injection(self, payload: dict) -> None:
        slot = self.slots[tuple(payload["slot"])]
        slot.recovery_pending = False
        state = self.shipment_states[slot.shipment_id]
        fresh_seq = state.next_seq
        state.next_seq += 1
        segment = transport.replacement_segment(slot.blueprint, fresh_seq)
        frame = link.frame_datagram(segment, self.params.pallet_mass)
        record = self.loss_registry.get(slot.key)
        if record is not None:
            record.dispatch_time = self._now_h()
            record.recovery_pending = False
        self._inject_frame(frame, payload["locus"], slot.key)
        self._trace("reinjected", slot=slot.key, node=payload["locus"],
                    frame=frame.id)

    def _on_table_exchange(self, payload: dict) -> None:
        self.build_tables()
        self._trace("table_exchange")

    def _on_capacity_report(self, payload: dict) -> None:
        report = payload["report"]
        for node in sorted(self.tables):
            routing.apply_capacity_report(self.tables[node], report)

    def _on_ecosystem_tick(self, payload: dict) -> None:
        now = self._now_h()
        for frame_id in sorted(self.ecosystems):
            eco = self.ecosystems[frame_id]
            runtime = self.frames[frame_id]
            if runtime.where is None:
                continue
            kind, where = runtime.where
            powered = kind == "mover" or self.graph.nodes[where].has(
                CAPABILITY_CONTAINER_POWER)
            if physical.tick_ecosystem(eco, runtime.frame, powered, now):
                self.metrics.cold_chain_breaches += 1
                self._trace("cold_chain_breach", frame=frame_id)

    def _on_hold_release(self, payload: dict) -> None:
        node = payload["node"]
        self.release_pending.discard(node)
        node_obj = self.graph.nodes[node]
        if self.occupancy[node] / node_obj.storage_capacity >= node_obj.occupancy_threshold:
            return  # re-filled before the release fired
        self.holding[node] = False
        self._trace("hold_released", node=node)
        for mover_id in list(self.gated_arrivals[node]):
            if self.holding[node]:
                break
            self.gated_arrivals[node].remove(mover_id)
            self._complete_arrival(self.movers[mover_id])
        if not self.holding[node]:
            for mover_id in list(self.held_departures[node]):
                self.held_departures[node].remove(mover_id)
                runtime = self.movers[mover_id]
                if not runtime.departure_scheduled:
                    runtime.departure_scheduled = True
                    self.schedule(EventKind.MOVER_DEPART, self.clock,
                                  mover=mover_id)

    def _on_loss_scan(self, payload: dict) -> None:
        now = self._now_h()
        overdue = transport.detect_loss(self.loss_registry, now,
                                        self.params.loss_timeout_fraction)
        for key in overdue:
            slot = self.slots[key]
            if slot.delivered or slot.written_off or slot.recovery_pending:
                continue
            if slot.active_frame is None:
                continue
            runtime = self.frames[slot.active_frame]
            if runtime.where is None:
                continue
            if runtime.where[0] == "mover":
                mover = self.movers[runtime.where[1]].mover
                if mover.at_node is None or mover.schedule:
                    continue  # in transit or still going somewhere: let it ride
                # Parked aboard a mover with nothing left to run: pull it off.
                node = mover.at_node
            else:
                node = runtime.where[1]
            self.metrics.timeout_retirements += 1
            self._trace("overdue", slot=key, node=node)
            self._retire_frame(runtime.frame, "timeout")
            self._begin_recovery(key, node, cause="timeout")

    def _on_simulation_end(self, payload: dict) -> None:
        self.stopped = True

    _HANDLERS = {
        EventKind.SHIPMENT_RELEASE: _on_shipment_release,
        EventKind.MOVER_DEPART: _on_mover_depart,
        EventKind.MOVER_ARRIVE: _on_mover_arrive,
        EventKind.NODE_PROCESS: _on_node_process,
        EventKind.TABLE_EXCHANGE: _on_table_exchange,
        EventKind.CAPACITY_REPORT_DELIVERY: _on_capacity_report,
        EventKind.INSPECTION_AT_NODE: _on_inspection,
        EventKind.ECOSYSTEM_TICK: _on_ecosystem_tick,
        EventKind.HOLD_RELEASE: _on_hold_release,
        EventKind.LOSS_SCAN: _on_loss_scan,
        EventKind.RECOVERY_INJECTION: _on_recovery_injection,
        EventKind.SIMULATION_END: _on_simulation_end,
    }

    # ------------------------------------------------------------- invariants

    def _mass_at_nodes(self) -> int:
        return sum(frame.mass
                   for node in self.store for frame in self.store[node]) + \
               sum(frame.mass
                   for node in self.in_delivery for frame in self.in_delivery[node])

    def _mass_aboard(self) -> int:
        return sum(self.movers[m].mover.loaded_mass for m in self.movers)

    def _post_event(self) -> None:
        at_nodes = self._mass_at_nodes()
        aboard = self._mass_aboard()
        expected = at_nodes + aboard + self.ledger.delivered + self.ledger.retired
        if self.ledger.injected != expected:
            raise ConservationError(
                f"mass ledger unbalanced at t={self._now_h()}: injected "
                f"{self.ledger.injected} != nodes {at_nodes} + aboard {aboard} "
                f"+ delivered {self.ledger.delivered} + retired {self.ledger.retired}")
        for node in sorted(self.graph.nodes):
            if not self.holding[node] or node in self.release_pending:
                continue
            node_obj = self.graph.nodes[node]
            if self.occupancy[node] / node_obj.storage_capacity < node_obj.occupancy_threshold:
                self.release_pending.add(node)
                self.schedule(EventKind.HOLD_RELEASE, self.clock, node=node)

    # --------------------------------------------------------------- results

    def _finalize(self) -> None:
        m = self.metrics
        lead_times = []
        on_time = 0
        completed = 0
        for sid in sorted(self.shipment_states):
            state = self.shipment_states[sid]
            lead = (None if state.completed_at is None
                    else state.completed_at - state.released)
            if lead is not None:
                completed += 1
                lead_times.append(lead)
                if state.completed_at <= state.shipment.deadline:
                    on_time += 1
            m.shipments[sid] = {
                "released": state.released,
                "deadline": state.shipment.deadline,
                "completed": state.completed_at,
                "lead_time": lead,
                "on_time": (None if state.completed_at is None
                            else state.completed_at <= state.shipment.deadline),
                "segments": state.segments,
                "delivered_segments": state.delivered_segments,
                "acks": state.acks,
                "budget": state.shipment.budget,
            }
        total_shipments = len(self.shipment_states)
        m.on_time_rate = on_time / total_shipments if total_shipments else None
        m.mean_lead_time = (sum(lead_times) / len(lead_times)
                            if lead_times else None)
        traversals = 0
        empty = 0
        mass_km = 0.0
        cap_km = 0.0
        for mid in sorted(self.movers):
            runtime = self.movers[mid]
            traversals += runtime.traversals
            empty += runtime.empty_runs
            mass_km += runtime.mass_km_loaded
            cap_km += runtime.mass_km_capacity
            m.mover_stats[mid] = {
                "traversals": runtime.traversals,
                "empty_runs": runtime.empty_runs,
                "mass_km_loaded": runtime.mass_km_loaded,
                "mass_km_capacity": runtime.mass_km_capacity,
                "utilization": (runtime.mass_km_loaded / runtime.mass_km_capacity
                                if runtime.mass_km_capacity else None),
                "stranded": runtime.stranded,
            }
        m.utilization = mass_km / cap_km if cap_km else None
        m.empty_run_ratio = empty / traversals if traversals else None
        m.ledger = self.ledger.snapshot(self._mass_at_nodes(), self._mass_aboard())


def run(config: ScenarioConfig) -> Metrics:
    """Validate and execute one scenario; a pure function of (config, seed)."""
    violations = validate_scenario(config)
    fatal = [v for v in violations if v.code != "GRAPH_DISCONNECTED"]
    if fatal:
        raise ValueError("scenario invalid:\n" + "\n".join(str(v) for v in fatal))
    return Simulation(config).run()
