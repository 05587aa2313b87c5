"""Scenario file ingestion.

One YAML document describes a whole run: road graph, carrier domains,
vehicle fleet with schedules, shipments, strategy, parameter overrides,
seed, and horizon. Shape problems raise ScenarioError (a parse failure);
semantic problems are reported by ``engine.validate_scenario``.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import yaml

from .codec import VERSION_DISPOSABLE, VERSION_REUSABLE
from .engine import MoverSpec, ScenarioConfig, SimParams
from .physical import PlannedLeg
from .topology import CarrierDomain, PiNode, RoadEdge, build_graph, make_address
from .transport import FreightItem, Shipment

TREATMENT_CODES = {"none": 0, "temperature": 1, "fragile": 2, "live_animal": 3}
CONTAINER_VERSIONS = {"disposable": VERSION_DISPOSABLE, "reusable": VERSION_REUSABLE}

_PARAM_KEYS = {
    "pallet_mass", "detection_probability", "table_exchange_period",
    "capacity_window", "loss_timeout_fraction", "loss_scan_period",
    "max_recovery_attempts", "refuel_delay", "reorder_delay", "reprint_delay",
    "power_tolerance", "ecosystem_tick", "default_hop_limit", "default_max_unit",
}


class ScenarioError(ValueError):
    """The scenario file cannot be understood (malformed or wrong shape)."""


def _expect_mapping(value, where: str) -> dict:
    if not isinstance(value, dict):
        raise ScenarioError(f"{where}: expected a mapping, got {type(value).__name__}")
    return value


def _expect_list(value, where: str) -> list:
    if not isinstance(value, list):
        raise ScenarioError(f"{where}: expected a list, got {type(value).__name__}")
    return value


def _check_keys(mapping: dict, allowed: set[str], where: str) -> None:
    unknown = set(mapping) - allowed
    if unknown:
        raise ScenarioError(f"{where}: unknown keys {sorted(unknown)}")


_REQUIRED = object()


def _get(mapping: dict, key: str, kind, where: str, default=_REQUIRED):
    if key not in mapping or mapping[key] is None:
        if default is _REQUIRED:
            raise ScenarioError(f"{where}: missing required key {key!r}")
        return default
    value = mapping[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kind is not None and not isinstance(value, kind):
        raise ScenarioError(
            f"{where}.{key}: expected {getattr(kind, '__name__', kind)}, "
            f"got {type(value).__name__}")
    return value


def _parse_nodes(raw: list, where: str) -> list[PiNode]:
    nodes = []
    for i, entry in enumerate(raw):
        w = f"{where}[{i}]"
        entry = _expect_mapping(entry, w)
        _check_keys(entry, {"id", "domain", "storage_kg", "threshold",
                            "capabilities", "address"}, w)
        node_id = _get(entry, "id", int, w)
        domain = _get(entry, "domain", int, w, default=0)
        caps = _get(entry, "capabilities", list, w, default=[])
        address = _get(entry, "address", int, w,
                       default=make_address(domain, node_id))
        nodes.append(PiNode(
            id=node_id,
            address=address,
            storage_capacity=_get(entry, "storage_kg", float, w),
            occupancy_threshold=_get(entry, "threshold", float, w, default=0.8),
            capabilities=frozenset(str(c) for c in caps),
            domain=domain,
        ))
    return nodes


def _parse_edges(raw: list, where: str) -> list[RoadEdge]:
    edges = []
    for i, entry in enumerate(raw):
        w = f"{where}[{i}]"
        entry = _expect_mapping(entry, w)
        _check_keys(entry, {"from", "to", "km", "kmh", "two_way"}, w)
        frm = _get(entry, "from", int, w)
        to = _get(entry, "to", int, w)
        km = _get(entry, "km", float, w)
        kmh = _get(entry, "kmh", float, w)
        edges.append(RoadEdge(from_node=frm, to_node=to, distance=km, speed=kmh))
        if _get(entry, "two_way", bool, w, default=False):
            edges.append(RoadEdge(from_node=to, to_node=frm, distance=km, speed=kmh))
    return edges


def _parse_fleet(raw: list, where: str) -> list[MoverSpec]:
    movers = []
    for i, entry in enumerate(raw):
        w = f"{where}[{i}]"
        entry = _expect_mapping(entry, w)
        _check_keys(entry, {"id", "capacity_kg", "tank_km", "fuel_km",
                            "speed_factor", "home", "legs", "repeat_every"}, w)
        legs = []
        for j, leg in enumerate(_get(entry, "legs", list, w, default=[])):
            lw = f"{w}.legs[{j}]"
            leg = _expect_mapping(leg, lw)
            _check_keys(leg, {"from", "to", "depart"}, lw)
            legs.append(PlannedLeg(
                edge=(_get(leg, "from", int, lw), _get(leg, "to", int, lw)),
                depart=_get(leg, "depart", float, lw)))
        movers.append(MoverSpec(
            id=_get(entry, "id", int, w),
            capacity=_get(entry, "capacity_kg", int, w),
            tank_range=_get(entry, "tank_km", float, w),
            fuel=_get(entry, "fuel_km", float, w, default=None),
            speed_factor=_get(entry, "speed_factor", float, w, default=1.0),
            home=_get(entry, "home", int, w),
            legs=legs,
            repeat_every=_get(entry, "repeat_every", float, w, default=None),
        ))
    return movers


def _traffic_class(entry: dict, w: str) -> int:
    treatment = _get(entry, "treatment", (str, int), w, default="none")
    if isinstance(treatment, str):
        if treatment not in TREATMENT_CODES:
            raise ScenarioError(
                f"{w}.treatment: {treatment!r} not one of {sorted(TREATMENT_CODES)}")
        treatment = TREATMENT_CODES[treatment]
    urgency = _get(entry, "urgency", int, w, default=0)
    if not 0 <= urgency <= 15:
        raise ScenarioError(f"{w}.urgency: {urgency} outside 0..15")
    if not 0 <= treatment <= 15:
        raise ScenarioError(f"{w}.treatment: {treatment} outside 0..15")
    return (urgency << 4) | treatment


def _parse_shipments(raw: list, node_address: dict[int, int], where: str
                     ) -> tuple[list[Shipment], dict[int, int]]:
    shipments = []
    max_units: dict[int, int] = {}
    for i, entry in enumerate(raw):
        w = f"{where}[{i}]"
        entry = _expect_mapping(entry, w)
        _check_keys(entry, {"id", "release", "from", "to", "deadline", "budget",
                            "treatment", "urgency", "ack", "urgent",
                            "connection_oriented", "container", "hop_limit",
                            "max_unit_kg", "items"}, w)
        items = []
        for j, item in enumerate(_get(entry, "items", list, w)):
            iw = f"{w}.items[{j}]"
            item = _expect_mapping(item, iw)
            _check_keys(item, {"id", "kg", "reproducible_3d", "requires_power"}, iw)
            items.append(FreightItem(
                id=_get(item, "id", int, iw),
                mass=_get(item, "kg", int, iw),
                reproducible_3d=_get(item, "reproducible_3d", bool, iw, default=False),
                requires_power=_get(item, "requires_power", bool, iw, default=False),
            ))
        container = _get(entry, "container", str, w, default="reusable")
        if container not in CONTAINER_VERSIONS:
            raise ScenarioError(
                f"{w}.container: {container!r} not one of {sorted(CONTAINER_VERSIONS)}")
        source = _get(entry, "from", int, w)
        dest = _get(entry, "to", int, w)
        for label, node in (("from", source), ("to", dest)):
            if node not in node_address:
                raise ScenarioError(f"{w}.{label}: unknown node id {node}")
        shipment_id = _get(entry, "id", int, w)
        shipments.append(Shipment(
            id=shipment_id,
            source_address=node_address[source],
            destination_address=node_address[dest],
            items=items,
            deadline=_get(entry, "deadline", float, w),
            budget=_get(entry, "budget", float, w, default=0.0),
            treatment=_traffic_class(entry, w),
            created_at=_get(entry, "release", float, w, default=0.0),
            ack_requested=_get(entry, "ack", bool, w, default=True),
            urgent=_get(entry, "urgent", bool, w, default=False),
            connection_oriented=_get(entry, "connection_oriented", bool, w,
                                     default=False),
            container_version=CONTAINER_VERSIONS[container],
            hop_limit=_get(entry, "hop_limit", int, w, default=None),
        ))
        max_unit = _get(entry, "max_unit_kg", int, w, default=None)
        if max_unit is not None:
            max_units[shipment_id] = max_unit
    return shipments, max_units


def parse_scenario(data: dict) -> ScenarioConfig:
    """Build a ScenarioConfig from an already-loaded YAML mapping."""
    data = _expect_mapping(data, "scenario")
    _check_keys(data, {"strategy", "seed", "end_time", "params", "graph",
                       "domains", "fleet", "shipments"}, "scenario")
    graph_raw = _expect_mapping(_get(data, "graph", dict, "scenario"), "graph")
    _check_keys(graph_raw, {"nodes", "edges"}, "graph")
    nodes = _parse_nodes(_expect_list(_get(graph_raw, "nodes", list, "graph"),
                                      "graph.nodes"), "graph.nodes")
    edges = _parse_edges(_expect_list(_get(graph_raw, "edges", list, "graph",
                                           default=[]), "graph.edges"), "graph.edges")
    domains = None
    if "domains" in data:
        domains = []
        for i, entry in enumerate(_expect_list(data["domains"], "domains")):
            w = f"domains[{i}]"
            entry = _expect_mapping(entry, w)
            _check_keys(entry, {"id", "nodes"}, w)
            domains.append(CarrierDomain(
                id=_get(entry, "id", int, w),
                member_nodes=frozenset(_get(entry, "nodes", list, w))))
    graph = build_graph(nodes, edges, domains)

    params_raw = _get(data, "params", dict, "scenario", default={})
    _check_keys(params_raw, _PARAM_KEYS, "params")
    params = SimParams(**params_raw)

    node_address = {n.id: n.address for n in nodes}
    shipments, max_units = _parse_shipments(
        _get(data, "shipments", list, "scenario", default=[]),
        node_address, "shipments")

    return ScenarioConfig(
        graph=graph,
        movers=_parse_fleet(_get(data, "fleet", list, "scenario", default=[]),
                            "fleet"),
        shipments=shipments,
        strategy=_get(data, "strategy", str, "scenario", default="rip"),
        params=params,
        seed=_get(data, "seed", int, "scenario", default=0),
        end_time=_get(data, "end_time", float, "scenario", default=72.0),
        max_units=max_units,
    )


def load_scenario(path: str | Path) -> tuple[ScenarioConfig, str]:
    """Read, parse, and digest a scenario file.

    Returns the config and the sha256 digest of the file's canonical JSON
    form, which identifies the scenario independent of YAML formatting.
    """
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"scenario {path} is not valid YAML: {exc}") from exc
    if data is None:
        raise ScenarioError(f"scenario {path} is empty")
    config = parse_scenario(data)
    canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
    digest = hashlib.sha256(canonical.encode()).hexdigest()
    return config, digest
