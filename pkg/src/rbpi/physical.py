"""Physical layer: vehicles as the transmission medium.

Movers travel road edges carrying frames; their free mass is the network's
bandwidth. Loading secures cargo automatically and every load or unload
emits a capacity report that feeds the routing tables. Refueling plays the
role of signal amplification, and powered container ecosystems keep cold
chains intact while freight dwells at hubs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .link import CargoReservation, Frame
from .routing import CapacityReport
from .topology import CAPABILITY_REFUEL, PiNode, RoadEdge, travel_time


class AccessControlError(RuntimeError):
    """Cargo space touched without a matching reservation."""


class StrandedError(RuntimeError):
    """Not enough fuel for the edge and no refueling at the hub."""


class UnsecuredFrameError(RuntimeError):
    """Departure refused while any aboard frame is unsecured."""


class FrameNotAboardError(RuntimeError):
    pass


@dataclass(frozen=True)
class AtNode:
    node: int


@dataclass(frozen=True)
class OnEdge:
    edge: tuple[int, int]
    departed_at: float


@dataclass
class PlannedLeg:
    edge: tuple[int, int]
    depart: float   # planned departure, simulation hours


@dataclass
class PiMover:
    """A capacity-constrained road vehicle following a declared schedule."""

    id: int
    capacity: int                  # kilograms
    tank_range: float              # kilometers
    fuel: float | None = None      # kilometers remaining; defaults to full
    speed_factor: float = 1.0
    location: AtNode | OnEdge = AtNode(0)
    load: list[Frame] = field(default_factory=list)
    schedule: list[PlannedLeg] = field(default_factory=list)
    reservations: dict[str, CargoReservation] = field(default_factory=dict)

    def __post_init__(self):
        if self.fuel is None:
            self.fuel = self.tank_range
        if not 0 <= self.fuel <= self.tank_range:
            raise ValueError(
                f"mover {self.id} fuel {self.fuel} outside [0, {self.tank_range}]")

    @property
    def loaded_mass(self) -> int:
        return sum(frame.mass for frame in self.load)

    @property
    def free_capacity(self) -> int:
        return self.capacity - self.loaded_mass

    @property
    def at_node(self) -> int | None:
        return self.location.node if isinstance(self.location, AtNode) else None


def report_free_capacity(mover: PiMover, now: float) -> CapacityReport:
    """Free-mass feedback toward the mover's next scheduled road, if any."""
    if mover.schedule:
        nxt = mover.schedule[0]
        return CapacityReport(mover=mover.id, edge=nxt.edge,
                              departure_time=max(nxt.depart, now),
                              free_capacity=mover.free_capacity)
    return CapacityReport(mover=mover.id, edge=None, departure_time=now,
                          free_capacity=mover.free_capacity)


def load_frame(mover: PiMover, frame: Frame, reservation: CargoReservation,
               now: float) -> CapacityReport:
    """Stow a reserved frame aboard; securing is automatic.

    The reservation is consumed and a capacity report emitted. Capacity can
    never be exceeded here: the reservation already claimed the mass.
    """
    held = mover.reservations.get(frame.id)
    if held is None or held is not reservation or reservation.mover != mover.id:
        raise AccessControlError(
            f"no reservation held by mover {mover.id} for frame {frame.id}")
    del mover.reservations[frame.id]
    assert mover.loaded_mass + frame.mass <= mover.capacity
    frame.secured = True
    mover.load.append(frame)
    return report_free_capacity(mover, now)


@dataclass
class UnloadResult:
    unloaded: bool
    occupancy_delta: int
    report: CapacityReport | None


def unload_frame(mover: PiMover, frame: Frame, node: PiNode, occupancy: float,
                 now: float, deliver: bool = False) -> UnloadResult:
    """Move a frame from the vehicle into hub storage (or to the consignee).

    When storage cannot take the mass the frame stays aboard and no report
    is emitted; the hub's hold logic deals with the congestion. Deliveries
    bypass storage entirely.
    """
    if frame not in mover.load:
        raise FrameNotAboardError(f"frame {frame.id} not aboard mover {mover.id}")
    if not deliver and occupancy + frame.mass > node.storage_capacity:
        return UnloadResult(unloaded=False, occupancy_delta=0, report=None)
    mover.load.remove(frame)
    delta = 0 if deliver else frame.mass
    return UnloadResult(unloaded=True, occupancy_delta=delta,
                        report=report_free_capacity(mover, now))


@dataclass(frozen=True)
class DepartOutcome:
    departs_at: float
    arrives_at: float
    refueled: bool


def depart(mover: PiMover, edge: RoadEdge, node: PiNode, now: float,
           refuel_delay: float = 0.5) -> DepartOutcome:
    """Send a mover down an edge, refueling first when needed and possible.

    Refueling fills the tank and costs a fixed service delay. Departure is
    refused outright while any aboard frame is unsecured.
    """
    at = mover.at_node
    if at != edge.from_node:
        raise ValueError(
            f"mover {mover.id} at {mover.location} cannot take edge {edge.key}")
    for frame in mover.load:
        if not frame.secured:
            raise UnsecuredFrameError(
                f"frame {frame.id} aboard mover {mover.id} is not secured")
    departs_at = now
    refueled = False
    if mover.fuel < edge.distance:
        if not node.has(CAPABILITY_REFUEL):
            raise StrandedError(
                f"mover {mover.id} has {mover.fuel:.1f} km fuel for a "
                f"{edge.distance:.1f} km edge and node {node.id} cannot refuel")
        mover.fuel = mover.tank_range
        if mover.fuel < edge.distance:
            raise StrandedError(
                f"mover {mover.id} tank range {mover.tank_range:.1f} km cannot "
                f"cover the {edge.distance:.1f} km edge")
        departs_at = now + refuel_delay
        refueled = True
    mover.location = OnEdge(edge=edge.key, departed_at=departs_at)
    arrives_at = departs_at + travel_time(edge) / mover.speed_factor
    return DepartOutcome(departs_at=departs_at, arrives_at=arrives_at,
                         refueled=refueled)


def arrive(mover: PiMover, edge: RoadEdge) -> None:
    """Complete an edge traversal: burn fuel, stand at the far hub."""
    if not isinstance(mover.location, OnEdge) or mover.location.edge != edge.key:
        raise ValueError(f"mover {mover.id} is not traversing edge {edge.key}")
    mover.fuel -= edge.distance
    assert mover.fuel >= 0
    mover.location = AtNode(edge.to_node)


@dataclass
class ContainerEcosystem:
    """Power/temperature service state for one frame's containers."""

    frame_id: str
    requires_power: bool
    tolerance: float                  # hours a power-needing frame survives unpowered
    unpowered_since: float | None = None
    breached: bool = False


def tick_ecosystem(eco: ContainerEcosystem, frame: Frame, powered: bool,
                   now: float) -> bool:
    """Advance one ecosystem check; returns True on a fresh cold-chain breach.

    A breach silently marks the frame damaged; only inspection will find it.
    Frames aboard movers count as powered (compliant vehicles feed their
    containers), so only hub dwell without container power can breach.
    """
    if eco.frame_id != frame.id:
        raise ValueError(f"ecosystem for {eco.frame_id} ticked with frame {frame.id}")
    if not eco.requires_power:
        return False
    if powered:
        eco.unpowered_since = None
        return False
    if eco.unpowered_since is None:
        eco.unpowered_since = now
        return False
    if not eco.breached and now - eco.unpowered_since > eco.tolerance:
        eco.breached = True
        frame.damaged = True
        return True
    return False
