"""End-to-end shipment layer.

Shipments are packed into sequenced container segments (first-fit
decreasing), reassembled at the destination in original item order, and
acknowledged on request. Lost or damaged segments are either reprinted at
a capable hub or reordered from the origin; physical freight cannot simply
be resent the way a data packet can.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .codec import (
    NEXT_HEADER_CONNECTION_ORIENTED,
    NEXT_HEADER_CONNECTIONLESS,
    VERSION_REUSABLE,
    PiDatagramHeader,
    PiSegmentHeader,
    SegmentFlags,
)
from .topology import CAPABILITY_PRINTER_3D, RoadGraph, address_local

_SEQ_MOD = 1 << 32


class UnsegmentableError(ValueError):
    """An item is heavier than the largest transportable unit."""


class ShipmentMismatchError(ValueError):
    """A segment was offered to the wrong shipment's reassembly buffer."""


@dataclass(frozen=True)
class FreightItem:
    id: int
    mass: int   # whole kilograms
    reproducible_3d: bool = False
    requires_power: bool = False

    def __post_init__(self):
        if self.mass <= 0:
            raise ValueError(f"item {self.id} mass {self.mass} must be positive")


@dataclass
class Shipment:
    """One customer order: items, addressing, deadline, and cost budget."""

    id: int
    source_address: int
    destination_address: int
    items: list[FreightItem]
    deadline: float            # simulation hours
    budget: float = 0.0        # recorded, not optimized
    treatment: int = 0         # traffic-class byte: low nibble treatment, high urgency
    created_at: float = 0.0
    ack_requested: bool = True
    urgent: bool = False
    connection_oriented: bool = False
    container_version: int = VERSION_REUSABLE
    hop_limit: int | None = None

    def __post_init__(self):
        if not self.items:
            raise ValueError(f"shipment {self.id} has no items")
        if self.deadline <= self.created_at:
            raise ValueError(
                f"shipment {self.id} deadline {self.deadline} not after "
                f"creation {self.created_at}")

    @property
    def total_mass(self) -> int:
        return sum(item.mass for item in self.items)


@dataclass
class Segment:
    """One routable container: headers, items, and reassembly instructions.

    ``slot`` is the position this segment fills within its shipment. A
    replacement copy keeps the slot of the segment it stands in for while
    carrying a fresh wire sequence number.
    """

    shipment_id: int
    header: PiSegmentHeader
    datagram_header: PiDatagramHeader
    items: tuple[FreightItem, ...]
    reassembly_instructions: tuple[int, ...]   # original item positions
    slot: int = 0

    def __post_init__(self):
        mass = sum(item.mass for item in self.items)
        if mass != self.datagram_header.payload_length:
            raise ValueError(
                f"segment mass {mass} != payload_length "
                f"{self.datagram_header.payload_length}")

    @property
    def mass(self) -> int:
        return self.datagram_header.payload_length


@dataclass
class Acknowledgement:
    shipment_id: int
    acknowledgement_number: int
    time: float


class ReassemblyStatus(enum.Enum):
    COMPLETE = "complete"
    PENDING = "pending"
    DUPLICATE = "duplicate"


@dataclass
class ReassemblyBuffer:
    """Destination-side collector keyed by shipment slot."""

    shipment_id: int
    received: dict[int, Segment] = field(default_factory=dict)
    first_slot: int | None = None
    last_slot: int | None = None

    @property
    def expected_span(self) -> tuple[int, int] | None:
        if self.first_slot is None or self.last_slot is None:
            return None
        return (self.first_slot, self.last_slot)

    def assembled_items(self) -> list[FreightItem]:
        """Items across all received segments, restored to original order."""
        placed: list[tuple[int, FreightItem]] = []
        for slot in sorted(self.received):
            seg = self.received[slot]
            placed.extend(zip(seg.reassembly_instructions, seg.items))
        placed.sort(key=lambda pair: pair[0])
        return [item for _, item in placed]


def segment_shipment(shipment: Shipment, max_unit: int, base_seq: int,
                     *, hop_limit: int = 16, window_size: int = 0) -> list[Segment]:
    """Pack a shipment's items into container segments of at most ``max_unit`` kg.

    First-fit decreasing: heaviest item first, each into the first segment
    with room. Sequence numbers run consecutively from ``base_seq``; the
    first segment carries SYN, the last FIN (a single segment carries both).
    """
    for item in shipment.items:
        if item.mass > max_unit:
            raise UnsegmentableError(
                f"item {item.id} mass {item.mass} kg exceeds max unit {max_unit} kg")

    order = sorted(range(len(shipment.items)),
                   key=lambda i: (-shipment.items[i].mass, i))
    bins: list[list[int]] = []
    bin_mass: list[int] = []
    for pos in order:
        mass = shipment.items[pos].mass
        for b, total in enumerate(bin_mass):
            if total + mass <= max_unit:
                bins[b].append(pos)
                bin_mass[b] += mass
                break
        else:
            bins.append([pos])
            bin_mass.append(mass)

    next_header = (NEXT_HEADER_CONNECTION_ORIENTED if shipment.connection_oriented
                   else NEXT_HEADER_CONNECTIONLESS)
    segments: list[Segment] = []
    for i, positions in enumerate(bins):
        positions = sorted(positions)
        seq = (base_seq + i) % _SEQ_MOD
        flags = SegmentFlags(
            ece=False,
            urg=shipment.urgent,
            ack=shipment.ack_requested,
            syn=(i == 0),
            fin=(i == len(bins) - 1),
        )
        header = PiSegmentHeader(
            source_port=address_local(shipment.source_address),
            destination_port=address_local(shipment.destination_address),
            sequence_number=seq,
            flags=flags,
            window_size=window_size,
        )
        datagram = PiDatagramHeader(
            version=shipment.container_version,
            traffic_class=shipment.treatment,
            flow_label=shipment.id & 0xFFFFF,
            payload_length=bin_mass[i],
            next_header=next_header,
            hop_limit=hop_limit if shipment.hop_limit is None else shipment.hop_limit,
            source=shipment.source_address,
            destination=shipment.destination_address,
        )
        segments.append(Segment(
            shipment_id=shipment.id,
            header=header,
            datagram_header=datagram,
            items=tuple(shipment.items[p] for p in positions),
            reassembly_instructions=tuple(positions),
            slot=seq,
        ))
    return segments


def reassemble(buffer: ReassemblyBuffer, segment: Segment
               ) -> tuple[ReassemblyStatus, list[FreightItem] | None]:
    """Offer one arrived segment to the buffer.

    Returns DUPLICATE when the slot is already filled (the copy is
    discarded), PENDING while slots are missing, and COMPLETE with the
    items in original order once every slot between SYN and FIN is present.
    """
    if segment.shipment_id != buffer.shipment_id:
        raise ShipmentMismatchError(
            f"segment of shipment {segment.shipment_id} offered to buffer "
            f"for shipment {buffer.shipment_id}")
    if segment.slot in buffer.received:
        return (ReassemblyStatus.DUPLICATE, None)
    buffer.received[segment.slot] = segment
    if segment.header.flags.syn:
        buffer.first_slot = segment.slot
    if segment.header.flags.fin:
        buffer.last_slot = segment.slot
    span = buffer.expected_span
    if span is not None and all(s in buffer.received
                                for s in range(span[0], span[1] + 1)):
        return (ReassemblyStatus.COMPLETE, buffer.assembled_items())
    return (ReassemblyStatus.PENDING, None)


def make_ack(segment: Segment, now: float) -> Acknowledgement | None:
    """Delivery acknowledgement carrying the next expected sequence number,
    or None when the segment never asked for one."""
    if not segment.header.flags.ack:
        return None
    return Acknowledgement(
        shipment_id=segment.shipment_id,
        acknowledgement_number=(segment.header.sequence_number + 1) % _SEQ_MOD,
        time=now)


@dataclass
class InFlightSegment:
    """Loss-detection bookkeeping for one dispatched segment copy."""

    dispatch_time: float
    deadline: float
    delivered: bool = False
    recovery_pending: bool = False


def loss_timeout(record: InFlightSegment, fraction: float = 0.5) -> float:
    return record.dispatch_time + fraction * (record.deadline - record.dispatch_time)


def detect_loss(registry: dict, now: float, fraction: float = 0.5) -> list:
    """Keys of registry entries overdue at ``now`` and not yet delivered.

    A segment is overdue once more than ``fraction`` of its dispatch-to-
    deadline span has elapsed. Entries already awaiting recovery are not
    re-reported.
    """
    overdue = []
    for key in sorted(registry):
        record = registry[key]
        if record.delivered or record.recovery_pending:
            continue
        if now > loss_timeout(record, fraction):
            overdue.append(key)
    return overdue


class RecoveryKind(enum.Enum):
    REPRINT = "reprint"
    REORDER = "reorder"


@dataclass(frozen=True)
class RecoveryAction:
    kind: RecoveryKind
    shipment_id: int
    slot: int
    locus: int   # node where the action takes place (reprint hub or origin)


def recover(segment: Segment, locus: int, graph: RoadGraph) -> RecoveryAction:
    """Decide how a lost or damaged segment comes back into circulation.

    Reprint only when every item is 3D-reproducible and the hub holding the
    loss has a printer; everything else is reordered from the origin.
    """
    node = graph.nodes[locus]
    reproducible = all(item.reproducible_3d for item in segment.items)
    if reproducible and node.has(CAPABILITY_PRINTER_3D):
        return RecoveryAction(RecoveryKind.REPRINT, segment.shipment_id,
                              segment.slot, locus)
    origin = graph.node_by_address(segment.datagram_header.source)
    origin_id = origin.id if origin is not None else locus
    return RecoveryAction(RecoveryKind.REORDER, segment.shipment_id,
                          segment.slot, origin_id)


def replacement_segment(segment: Segment, fresh_seq: int) -> Segment:
    """Fresh copy of a lost segment: same slot, items, and flags, new
    wire sequence number."""
    header = PiSegmentHeader(
        source_port=segment.header.source_port,
        destination_port=segment.header.destination_port,
        sequence_number=fresh_seq % _SEQ_MOD,
        acknowledgement_number=segment.header.acknowledgement_number,
        flags=segment.header.flags,
        window_size=segment.header.window_size,
        options=segment.header.options,
    )
    datagram = PiDatagramHeader(
        version=segment.datagram_header.version,
        traffic_class=segment.datagram_header.traffic_class,
        flow_label=segment.datagram_header.flow_label,
        payload_length=segment.datagram_header.payload_length,
        next_header=segment.datagram_header.next_header,
        hop_limit=segment.datagram_header.hop_limit,
        source=segment.datagram_header.source,
        destination=segment.datagram_header.destination,
    )
    return Segment(
        shipment_id=segment.shipment_id,
        header=header,
        datagram_header=datagram,
        items=segment.items,
        reassembly_instructions=segment.reassembly_instructions,
        slot=segment.slot,
    )
