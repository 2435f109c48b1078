import itertools
import random

import networkx as nx
import pytest

from osp.topology import (IpPath, Topology, TopologyError, ip_distance, load_topology, off_path_domain_oracle,
                          read_edge_list, shortest_path)


def as_graph(topo):
    g = nx.Graph()
    g.add_edges_from(topo.edges)
    return g


def test_bundled_geant_shape(geant):
    routers = [n for n in geant.nodes if geant.roles[n] == "router"]
    servers = [n for n in geant.nodes if geant.roles[n] == "server"]
    assert len(routers) == 41 and len(servers) == 32
    assert len(geant.osp_members) == 73
    assert all(len(geant.neighbors(s)) == 1 for s in servers)
    assert geant.tracker in geant.osp_members


def test_max_overlay_degree_is_ten(geant):
    assert max(len(geant.overlay_neighbors(n)) for n in geant.osp_members) == 10


def test_full_deployment_overlay_is_the_graph(geant):
    for n in geant.nodes:
        assert geant.overlay_neighbors(n) == set(geant.neighbors(n))


def test_distances_match_networkx(geant):
    lengths = dict(nx.all_pairs_shortest_path_length(as_graph(geant)))
    for a, b in itertools.product(geant.nodes, repeat=2):
        assert ip_distance(geant, a, b) == lengths[a][b]


def test_paths_are_valid_shortest_walks(geant):
    g = as_graph(geant)
    rng = random.Random(1)
    for _ in range(300):
        a, b = rng.sample(geant.nodes, 2)
        hops = shortest_path(geant, a, b).hops
        assert hops[0] == a and hops[-1] == b
        assert all(g.has_edge(u, v) for u, v in zip(hops, hops[1:]))
        assert len(hops) - 1 == nx.shortest_path_length(g, a, b)


def test_routes_symmetric_and_subpath_closed(geant):
    rng = random.Random(2)
    for _ in range(200):
        a, b = rng.sample(geant.nodes, 2)
        hops = geant.shortest_path(a, b).hops
        assert geant.shortest_path(b, a).hops == hops[::-1]
        i, j = sorted(rng.sample(range(len(hops)), 2))
        assert geant.shortest_path(hops[i], hops[j]).hops == hops[i:j + 1]


def test_routing_is_reproducible():
    a = load_topology("geant.yaml")
    b = load_topology("geant.yaml")
    for x, y in itertools.combinations(a.nodes[:20], 2):
        assert a.shortest_path(x, y) == b.shortest_path(x, y)


def test_line_examples(line5):
    assert shortest_path(line5, "a", "e").hops == ("a", "b", "c", "d", "e")
    assert ip_distance(line5, "a", "e") == 4
    assert ip_distance(line5, "c", "c") == 0
    assert shortest_path(line5, "b", "b").length == 0


def test_unknown_node_rejected(line5):
    with pytest.raises(KeyError):
        line5.shortest_path("a", "zz")


@pytest.mark.parametrize("r,expected", [
    (0, {"a", "b"}),
    (1, {"a", "b", "c"}),
    (2, {"a", "b", "c", "d"}),
    (9, {"a", "b", "c", "d", "e"}),
])
def test_oracle_on_line(line5, r, expected):
    assert off_path_domain_oracle(line5, line5.shortest_path("a", "b"), r) == expected


def test_oracle_star(star5):
    path = star5.shortest_path("l1", "l2")
    assert off_path_domain_oracle(star5, path, 0) == {"l1", "c", "l2"}
    assert off_path_domain_oracle(star5, path, 1) == set(star5.nodes)


def test_oracle_excludes_non_members(line5):
    partial = line5.with_members({"a", "c", "e"})
    assert off_path_domain_oracle(partial, ["a", "b"], 2) == {"a", "c"}


def test_oracle_monotone_in_radius(geant):
    rng = random.Random(3)
    for _ in range(30):
        a, b = rng.sample(geant.nodes, 2)
        path = geant.shortest_path(a, b)
        sets = [off_path_domain_oracle(geant, path, r) for r in range(5)]
        assert all(x <= y for x, y in zip(sets, sets[1:]))


def test_oracle_matches_networkx_distances(geant):
    lengths = dict(nx.all_pairs_shortest_path_length(as_graph(geant)))
    rng = random.Random(4)
    for _ in range(30):
        a, b = rng.sample(geant.nodes, 2)
        hops = geant.shortest_path(a, b).hops
        r = rng.randrange(4)
        want = {n for n in geant.nodes if min(lengths[h][n] for h in hops) <= r}
        assert off_path_domain_oracle(geant, IpPath(hops), r) == want


def test_oracle_rejects_negative_radius(line5):
    with pytest.raises(ValueError):
        off_path_domain_oracle(line5, ["a"], -1)


def test_partial_overlay_skips_non_members(line5):
    partial = line5.with_members({"a", "c", "e"})
    assert partial.overlay_neighbors("a") == {"c"}
    assert partial.overlay_neighbors("c") == {"a", "e"}


def test_edge_list_parsing():
    adj = read_edge_list("a b  # comment\nb c; c d\n\n")
    assert adj == {"a": {"b"}, "b": {"a", "c"}, "c": {"b", "d"}, "d": {"c"}}
    topo = load_topology("x y; y z")
    assert topo.nodes == ["x", "y", "z"]


@pytest.mark.parametrize("text", ["a", "a b c", "a a", ""])
def test_bad_edge_lists(text):
    with pytest.raises(TopologyError):
        load_topology(text + "\n")


def test_disconnected_rejected():
    with pytest.raises(TopologyError):
        load_topology("a b\nc d\n")


def test_missing_file():
    with pytest.raises(TopologyError):
        load_topology("no/such/file.gml")


def test_scenario_servers(tmp_path):
    (tmp_path / "base.txt").write_text("a b\nb c\n")
    (tmp_path / "s.yaml").write_text(
        "topology: base.txt\ntracker: s1\nosp_members: [a, c, s1]\nservers:\n  - {name: s1, attach: b}\n")
    topo = load_topology(tmp_path / "s.yaml")
    assert topo.neighbors("s1") == ["b"]
    assert topo.roles["s1"] == "server"
    assert topo.osp_members == {"a", "c", "s1"}
    assert topo.tracker == "s1"


def test_scenario_bad_attach(tmp_path):
    (tmp_path / "base.txt").write_text("a b\n")
    (tmp_path / "s.yaml").write_text("topology: base.txt\nservers:\n  - {name: s1, attach: q}\n")
    with pytest.raises(TopologyError):
        load_topology(tmp_path / "s.yaml")


def test_addresses_unique(geant):
    addrs = {geant.address(n) for n in geant.nodes}
    assert len(addrs) == len(geant.nodes)
    assert all(geant.node_at(geant.address(n)) == n for n in geant.nodes)


def test_abilene_loads():
    topo = load_topology("abilene.gml")
    assert len(topo.nodes) == 34
    assert isinstance(topo, Topology)
