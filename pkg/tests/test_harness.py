import csv
import math

import pytest

from osp import harness
from osp.codec import NominalSizes
from osp.discovery import GossipConfig, PeerTable
from osp.harness import (MetricsRecord, OracleMismatch, Scenario, UnconvergedError, emit_results, eta_analytic,
                         eta_from_hops, mean_ci95, run_discovery, run_experiment)
from osp.topology import load_topology


def test_eta_geant_unit_hops():
    assert eta_from_hops([1] * 73, NominalSizes(), 5.0) == 73 * 480 * 8 / 5 == 56064


def test_eta_empty_network():
    assert eta_from_hops([]) == 0


def test_eta_alternative_ack_size():
    assert eta_from_hops([1] * 73, NominalSizes(ack=184), 5.0) == pytest.approx(73 * 552 * 8 / 5)


def test_eta_analytic_from_converged_tables():
    topo = load_topology("line5.txt").with_members({"a", "c", "e"})
    _, nodes, rec = run_discovery(topo, GossipConfig(), seed=0)
    pets = {n: node.discovery.pet for n, node in nodes.items()}
    # a-c: 2 hops, c-a and c-e: 2 hops, e-c: 2 hops
    assert eta_analytic(topo, pets) == pytest.approx(3 * 2 * 480 * 8 / 5)


def test_eta_analytic_names_unconverged_node():
    topo = load_topology("line5.txt")
    pets = {n: PeerTable(None) for n in topo.nodes}
    with pytest.raises(UnconvergedError, match="peer table of a"):
        eta_analytic(topo, pets)
    with pytest.raises(UnconvergedError, match="no peer table"):
        eta_analytic(topo, {})


def test_mean_ci95_student_t():
    m, lo, hi = mean_ci95([1.0, 2.0, 3.0])
    # t(0.975, 2) = 4.302653, sem = 1/sqrt(3)
    assert m == 2.0
    assert hi - m == pytest.approx(4.302653 / math.sqrt(3), rel=1e-6)
    assert m - lo == pytest.approx(hi - m)
    assert mean_ci95([5.0, 5.0]) == (5.0, 5.0, 5.0)
    single = mean_ci95([4.0])
    assert single[0] == 4.0 and math.isnan(single[1])
    assert all(math.isnan(v) for v in mean_ci95([]))


def test_tgd_is_ngc_times_period():
    sc = Scenario(topology="star5.txt", kind="discover", seeds=[0, 1, 2], pts_sizes=(1, 2),
                  gossip=GossipConfig(period_T=3.0))
    records = run_experiment(sc)
    assert len(records) == 6
    for rec in records:
        assert rec.converged and rec.T_GD == rec.n_GC * 3.0
        assert rec.n_GC == max(rec.node_nGC.values())


def test_unconverged_run_flagged():
    sc = Scenario(topology="geant.yaml", kind="discover", seeds=[0], sim=harness.SimConfig(sim_time_limit=20.0))
    rec = run_experiment(sc)[0]
    assert not rec.converged and rec.n_GC is None and rec.T_GD is None


def test_scenario_validation():
    with pytest.raises(ValueError):
        Scenario(kind="nope")
    with pytest.raises(ValueError):
        Scenario(repetitions=0)
    with pytest.raises(ValueError):
        Scenario(repetitions=2, seeds=[1])
    assert Scenario(kind="discover").seeds == list(range(20))
    assert Scenario(kind="partial", seed=7).seeds == [7, 8, 9, 10, 11]


def test_scenario_from_yaml(tmp_path):
    path = tmp_path / "s.yaml"
    path.write_text("topology: line5.txt\nkind: distribute\nrepetitions: 2\nradii: [1]\n"
                    "gossip: {pts_size: 3}\nsim: {per_hop_latency: 0.002}\n")
    sc = Scenario.load(path)
    assert sc.radii == (1,) and sc.gossip.pts_size == 3 and sc.sim.per_hop_latency == 0.002
    assert sc.seeds == [0, 1]
    path.write_text("bogus: 1\n")
    with pytest.raises(ValueError):
        Scenario.load(path)


def test_distribution_records():
    sc = Scenario(topology="line5.txt", kind="distribute", seeds=[3], radii=(0, 2), payload=100)
    records = run_experiment(sc)
    assert {(r.L, r.r) for r in records} == {(L, r) for L in range(1, 5) for r in (0, 2)}
    for rec in records:
        assert rec.coverage == rec.oracle and rec.complete and rec.terminated
        assert rec.bytes_on_wire > rec.codec_bytes > 0
        assert rec.completion_time < 1.0


def test_oracle_mismatch_is_fatal(monkeypatch):
    monkeypatch.setattr(harness, "off_path_domain_oracle", lambda topo, path, r: {"nobody"})
    sc = Scenario(topology="line5.txt", kind="distribute", seeds=[0], radii=(0,))
    with pytest.raises(OracleMismatch):
        run_experiment(sc)


def test_pair_sampling_caps_groups():
    import random
    topo = load_topology("geant.yaml")
    groups = harness.sample_pairs(topo, 30, random.Random(0))
    assert all(len(p) <= 30 for p in groups.values())
    assert all(topo.ip_distance(a, b) == L for L, pairs in groups.items() for a, b in pairs)
    assert max(groups) == 9


def test_partial_member_sampling():
    import random
    topo = load_topology("geant.yaml")
    t = harness.sample_members(topo, 0.25, random.Random(1))
    assert len(t.osp_members) == 18 and t.tracker in t.osp_members
    assert harness.sample_members(topo, 1.0, random.Random(1)).osp_members == set(topo.nodes)
    with pytest.raises(ValueError):
        harness.sample_members(topo, 0.0, random.Random(1))


def read(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.mark.parametrize("kind", harness.EXPERIMENTS)
def test_empty_records_give_headers(tmp_path, kind):
    for path in emit_results(kind, [], tmp_path):
        rows = read(path)
        assert len(rows) == 1 and tuple(rows[0]) == harness.SCHEMAS[path.stem]


def test_discovery_summary_schema(tmp_path):
    sc = Scenario(topology="star5.txt", kind="sweep", seeds=[0, 1], pts_sizes=(1, 2))
    paths = emit_results("sweep", run_experiment(sc), tmp_path)
    summary = read(tmp_path / "discovery_summary.csv")
    assert summary[0][:6] == ["pts_size", "runs", "converged", "mean_nGC", "ci95_lo", "ci95_hi"]
    assert summary[0][-1] == "T_GD"
    assert [row[0] for row in summary[1:]] == ["1", "2"]
    assert len(paths) == 3


def test_fig4_rows_keyed_by_l_and_r(tmp_path):
    sc = Scenario(topology="line5.txt", kind="distribute", seeds=[0], radii=(0, 1))
    emit_results("distribute", run_experiment(sc), tmp_path)
    rows = read(tmp_path / "distribution_summary.csv")
    assert rows[0][:2] == ["L", "r"]
    assert [(r[0], r[1]) for r in rows[1:]] == [(str(L), str(r)) for L in range(1, 5) for r in (0, 1)]


def test_unwritable_destination(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        emit_results("discover", [], blocker / "sub")


def test_record_coverage_ratio():
    rec = MetricsRecord("distribute", 0, coverage=frozenset("ab"), oracle=frozenset("abcd"))
    assert rec.coverage_ratio == 0.5
    assert MetricsRecord("distribute", 0).coverage_ratio is None
