"""Road graph invariants, travel time, neighbor enumeration."""

import random

import pytest

from rbpi.topology import (
    PiNode,
    RoadEdge,
    address_domain,
    address_local,
    build_graph,
    make_address,
    neighbors,
    travel_time,
    validate_graph,
)


def node(nid, domain=0, storage=1000.0, threshold=0.8, caps=(), address=None):
    return PiNode(id=nid,
                  address=make_address(domain, nid) if address is None else address,
                  storage_capacity=storage, occupancy_threshold=threshold,
                  capabilities=frozenset(caps), domain=domain)


class TestAddressScheme:
    def test_split_roundtrip(self):
        address = make_address(3, 17)
        assert address_domain(address) == 3
        assert address_local(address) == 17

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            make_address(1 << 16, 0)


class TestValidateGraph:
    def test_two_nodes_one_edge_valid(self):
        g = build_graph([node(1), node(2)],
                        [RoadEdge(1, 2, 10.0, 50.0), RoadEdge(2, 1, 10.0, 50.0)])
        assert validate_graph(g) == []

    def test_edge_to_missing_node(self):
        g = build_graph([node(1), node(2)],
                        [RoadEdge(1, 2, 10.0, 50.0), RoadEdge(1, 99, 5.0, 50.0)])
        codes = [v.code for v in validate_graph(g)]
        assert "EDGE_UNKNOWN_NODE" in codes
        offending = [v for v in validate_graph(g) if v.code == "EDGE_UNKNOWN_NODE"]
        assert "99" in offending[0].detail

    def test_duplicate_address_found_by_scan(self):
        # Build by brute force: same address assigned twice must trip exactly
        # the uniqueness check.
        g = build_graph([node(1, address=7), node(2, address=7)],
                        [RoadEdge(1, 2, 10.0, 50.0)])
        dup = [v for v in validate_graph(g) if v.code == "NODE_DUP_ADDRESS"]
        assert len(dup) == 1

    def test_self_loop_rejected(self):
        g = build_graph([node(1), node(2)],
                        [RoadEdge(1, 1, 10.0, 50.0), RoadEdge(1, 2, 1.0, 10.0)])
        assert "EDGE_SELF_LOOP" in [v.code for v in validate_graph(g)]

    def test_disconnected_reported(self):
        g = build_graph([node(1), node(2), node(3)], [RoadEdge(1, 2, 10.0, 50.0)])
        assert "GRAPH_DISCONNECTED" in [v.code for v in validate_graph(g)]

    def test_domain_overlap_rejected(self):
        from rbpi.topology import CarrierDomain
        g = build_graph([node(1, domain=1), node(2, domain=1)],
                        [RoadEdge(1, 2, 10.0, 50.0)],
                        [CarrierDomain(1, frozenset({1, 2})),
                         CarrierDomain(2, frozenset({2}))])
        assert "DOMAIN_OVERLAP" in [v.code for v in validate_graph(g)]

    def test_bad_threshold(self):
        g = build_graph([node(1, threshold=0.0), node(2)],
                        [RoadEdge(1, 2, 10.0, 50.0)])
        assert "NODE_BAD_THRESHOLD" in [v.code for v in validate_graph(g)]


class TestTravelTime:
    def test_100km_at_50kmh(self):
        assert travel_time(RoadEdge(1, 2, 100.0, 50.0)) == 2.0

    def test_half_km_at_5kmh(self):
        assert travel_time(RoadEdge(1, 2, 0.5, 5.0)) == 0.1

    def test_randomized_against_direct_recomputation(self):
        rng = random.Random(7)
        for _ in range(200):
            distance = rng.uniform(0.1, 900.0)
            speed = rng.uniform(5.0, 130.0)
            edge = RoadEdge(1, 2, distance, speed)
            assert travel_time(edge) == distance / speed


class TestNeighbors:
    def triangle(self):
        nodes = [node(1), node(2), node(3)]
        edges = []
        for a in (1, 2, 3):
            for b in (1, 2, 3):
                if a != b:
                    edges.append(RoadEdge(a, b, 10.0, 50.0))
        return build_graph(nodes, edges)

    def test_isolated_node_empty(self):
        g = build_graph([node(1), node(2)], [RoadEdge(2, 1, 3.0, 30.0)])
        assert neighbors(g, 1) == []

    def test_triangle_ascending_order(self):
        g = self.triangle()
        assert [n for _, n in neighbors(g, 2)] == [1, 3]

    def test_unknown_node_raises(self):
        with pytest.raises(KeyError):
            neighbors(self.triangle(), 42)

    def test_matches_brute_force_scan(self):
        rng = random.Random(11)
        nodes = [node(i) for i in range(1, 9)]
        edges = {}
        for _ in range(30):
            a, b = rng.sample(range(1, 9), 2)
            edges[(a, b)] = RoadEdge(a, b, rng.uniform(1, 50), 50.0)
        g = build_graph(nodes, list(edges.values()))
        for nid in range(1, 9):
            expected = sorted(
                [(e, e.to_node) for e in edges.values() if e.from_node == nid],
                key=lambda pair: pair[1])
            assert neighbors(g, nid) == expected

    def test_order_stable_across_insertion_orders(self):
        edges = [RoadEdge(1, 3, 5.0, 50.0), RoadEdge(1, 2, 5.0, 50.0)]
        g1 = build_graph([node(1), node(2), node(3)], edges)
        g2 = build_graph([node(1), node(2), node(3)], list(reversed(edges)))
        assert ([n for _, n in neighbors(g1, 1)]
                == [n for _, n in neighbors(g2, 1)] == [2, 3])
