"""Node-to-node handoff layer.

Datagrams are framed into pallet-level units, cargo space aboard vehicles
is reserved through a single arbiter, overloaded hubs issue hold signals
to inbound traffic, and damage is found by probabilistic visual inspection
at each handoff (there is no computable checksum over physical goods).
"""

from __future__ import annotations

import enum
import math
import random
from dataclasses import dataclass
from typing import TYPE_CHECKING

from .topology import PiNode, RoadGraph
from .transport import RecoveryAction, Segment, recover

if TYPE_CHECKING:
    from .physical import PiMover

_TREATMENT_NAMES = {0: "none", 1: "temperature-controlled", 2: "fragile", 3: "live-animal"}


@dataclass
class Frame:
    """The smallest transportable unit wrapping one segment.

    ``damaged`` is ground truth hidden from the protocol stack; only
    inspection can reveal it.
    """

    id: str
    segment: Segment
    mode_instructions: str
    pallet_count: int
    damaged: bool = False
    secured: bool = False

    def __post_init__(self):
        if self.pallet_count < 1:
            raise ValueError(f"frame {self.id} pallet_count {self.pallet_count} < 1")

    @property
    def mass(self) -> int:
        return self.segment.mass

    @property
    def destination(self) -> int:
        return self.segment.datagram_header.destination

    @property
    def requires_power(self) -> bool:
        return any(item.requires_power for item in self.segment.items)


def frame_datagram(segment: Segment, pallet_mass: float,
                   frame_id: str | None = None) -> Frame:
    """Wrap a segment for handoff: pallet count by ceiling division, mode
    instructions rendered from the traffic class, not yet secured."""
    if pallet_mass <= 0:
        raise ValueError(f"pallet_mass {pallet_mass} must be positive")
    dg = segment.datagram_header
    treatment = _TREATMENT_NAMES.get(dg.treatment_class, f"class-{dg.treatment_class}")
    instructions = f"treatment={treatment};urgency={dg.urgency_class}"
    if frame_id is None:
        frame_id = f"{segment.shipment_id}:{segment.header.sequence_number}"
    return Frame(
        id=frame_id,
        segment=segment,
        mode_instructions=instructions,
        pallet_count=max(1, math.ceil(dg.payload_length / pallet_mass)),
    )


@dataclass(frozen=True)
class CargoReservation:
    mover: int
    frame: str
    mass: int
    granted_at: float


@dataclass(frozen=True)
class ReservationRejected:
    """Denied cargo-space request, carrying what was still free."""

    mover: int
    frame: str
    remaining: float


def reserve_cargo_space(mover: "PiMover", frame: Frame,
                        now: float = 0.0) -> CargoReservation | ReservationRejected:
    """Claim space aboard a vehicle before loading.

    Grants never oversubscribe: load plus all outstanding reservations
    stays within capacity. Grants are serialized through the event engine,
    which is what makes that invariant hold under any arrival order.
    """
    remaining = mover.capacity - mover.loaded_mass - sum(
        r.mass for r in mover.reservations.values())
    if frame.mass > remaining:
        return ReservationRejected(mover=mover.id, frame=frame.id, remaining=remaining)
    reservation = CargoReservation(mover=mover.id, frame=frame.id,
                                   mass=frame.mass, granted_at=now)
    mover.reservations[frame.id] = reservation
    return reservation


@dataclass(frozen=True)
class HoldSignal:
    """Issued by a hub at or past its occupancy threshold; inbound vehicles
    wait at their current hub until released."""

    node: int
    issued_at: float
    reason: float   # occupancy fraction that triggered the hold


def node_flow_control(node: PiNode, occupancy: float, now: float) -> HoldSignal | None:
    if occupancy < 0:
        raise ValueError(f"occupancy {occupancy} negative")
    fraction = occupancy / node.storage_capacity
    if fraction >= node.occupancy_threshold:
        return HoldSignal(node=node.id, issued_at=now, reason=fraction)
    return None


class InspectionResult(enum.Enum):
    OK = "ok"
    DAMAGE_DETECTED = "damage_detected"


def inspect(frame: Frame, detection_probability: float,
            rng: random.Random) -> InspectionResult:
    """Visual inspection at a handoff: never flags sound freight, catches
    damaged freight with the given probability."""
    if not 0.0 <= detection_probability <= 1.0:
        raise ValueError(f"detection_probability {detection_probability} outside [0, 1]")
    if frame.damaged and rng.random() < detection_probability:
        return InspectionResult.DAMAGE_DETECTED
    return InspectionResult.OK


def handle_damage(frame: Frame, node: PiNode, graph: RoadGraph) -> RecoveryAction:
    """Route a detected damage into the reprint-or-reorder decision; the
    damaged frame itself leaves circulation."""
    return recover(frame.segment, node.id, graph)
