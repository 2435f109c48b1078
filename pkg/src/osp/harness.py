"""Experiment runner: discovery sweeps, distribution overhead, partial deployment.

Every run is a pure function of (topology, configuration, seed).  Results are
plain ``MetricsRecord`` rows; ``emit_results`` turns them into CSV tables.
"""

from __future__ import annotations

import csv
import itertools
import math
import random
import statistics
from collections import defaultdict
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import yaml
from scipy import stats

from .codec import NominalSizes, SaKind, SaMessage
from .discovery import GossipConfig, PeerTable
from .distribution import DistributionConfig, SfRegistry
from .node import OspNode, build_nodes
from .simnet import SimConfig, Simulator
from .topology import NodeId, Topology, load_topology, off_path_domain_oracle

EXPERIMENTS = ("discover", "distribute", "overhead", "partial", "sweep")
DEFAULT_REPETITIONS = {"discover": 20, "sweep": 20, "distribute": 1, "overhead": 5, "partial": 5}
PROBE_SERVICE = 1


class OracleMismatch(AssertionError):
    """Zero-loss coverage differs from the off-path domain: a protocol bug."""


class UnconvergedError(ValueError):
    pass


@dataclass
class Scenario:
    topology: str = "geant.yaml"
    kind: str = "discover"
    members: list[NodeId] | None = None
    osp_fraction: float | None = None
    gossip: GossipConfig = field(default_factory=GossipConfig)
    distribution: DistributionConfig = field(default_factory=DistributionConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    repetitions: int | None = None
    seed: int = 0
    seeds: list[int] | None = None
    pts_sizes: tuple[int, ...] = (2,)
    radii: tuple[int, ...] = (0, 1, 2, 3)
    payload: int = 1024
    pairs_per_group: int = 30
    fractions: tuple[float, ...] = (0.25, 0.5, 0.75, 1.0)
    measure_cycles: int = 10
    sizes: NominalSizes = field(default_factory=NominalSizes)
    trace_dir: str | None = None

    def __post_init__(self):
        if self.kind not in EXPERIMENTS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if self.repetitions is None:
            self.repetitions = len(self.seeds) if self.seeds else DEFAULT_REPETITIONS[self.kind]
        if self.repetitions < 1:
            raise ValueError("repetitions must be at least 1")
        if self.seeds is None:
            self.seeds = [self.seed + i for i in range(self.repetitions)]
        if len(self.seeds) != self.repetitions:
            raise ValueError("seeds list length must equal repetitions")
        if self.payload < 0 or self.payload > 0xFFFF:
            raise ValueError("payload must fit a 16-bit length")

    @classmethod
    def from_mapping(cls, data: Mapping, **overrides) -> "Scenario":
        data = dict(data)
        nested = {"gossip": GossipConfig, "distribution": DistributionConfig, "sim": SimConfig, "sizes": NominalSizes}
        kwargs = {}
        for key, value in data.items():
            if key in nested:
                kwargs[key] = nested[key](**(value or {}))
            elif key in ("pts_sizes", "radii", "fractions"):
                kwargs[key] = tuple(value)
            elif key in {f.name for f in fields(cls)}:
                kwargs[key] = value
            else:
                raise ValueError(f"unknown scenario key {key!r}")
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str | Path, **overrides) -> "Scenario":
        return cls.from_mapping(yaml.safe_load(Path(path).read_text()) or {}, **overrides)

    @property
    def tracing(self) -> bool:
        return self.trace_dir is not None

    def save_trace(self, sim: Simulator, label: str) -> None:
        if self.trace_dir is None:
            return
        out = Path(self.trace_dir)
        out.mkdir(parents=True, exist_ok=True)
        sim.write_trace(out / f"{self.kind}-{label}.jsonl")

    def load_topology(self) -> Topology:
        topo = load_topology(self.topology)
        if self.members is not None:
            topo = topo.with_members(self.members)
        elif self.osp_fraction is not None and self.osp_fraction < 1.0:
            topo = sample_members(topo, self.osp_fraction, random.Random(self.seed))
        return topo


@dataclass
class MetricsRecord:
    experiment: str
    seed: int
    topology: str = ""
    pts_size: int | None = None
    period_T: float | None = None
    node_nGC: dict[NodeId, int] = field(default_factory=dict)
    n_GC: int | None = None
    converged: bool = True
    K: int | None = None
    fraction: float | None = None
    v_mean: float | None = None
    eta: float | None = None
    eta_measured: float | None = None
    src: NodeId | None = None
    dst: NodeId | None = None
    L: int | None = None
    r: int | None = None
    bytes_on_wire: int | None = None
    codec_bytes: int | None = None
    coverage: frozenset[NodeId] = frozenset()
    oracle: frozenset[NodeId] = frozenset()
    completion_time: float | None = None
    complete: bool | None = None
    terminated: bool | None = None

    @property
    def T_GD(self) -> float | None:
        if self.n_GC is None or self.period_T is None:
            return None
        return self.n_GC * self.period_T

    @property
    def coverage_ratio(self) -> float | None:
        if not self.oracle:
            return None
        return len(self.coverage & self.oracle) / len(self.oracle)


# -- analytic overhead -------------------------------------------------------


def eta_from_hops(v: Iterable[float], sizes: NominalSizes | None = None, period_T: float = 5.0) -> float:
    """Aggregate gossip bandwidth in bit/s given each node's mean neighbour distance."""
    sizes = sizes or NominalSizes()
    return sum(v) * sizes.session_total * 8 / period_T


def mean_neighbor_hops(topo: Topology, pets: Mapping[NodeId, PeerTable]) -> dict[NodeId, float]:
    out = {}
    for node in sorted(topo.osp_members):
        pet = pets.get(node)
        if pet is None:
            raise UnconvergedError(f"no peer table for {node}")
        expected = {topo.address(m) for m in topo.overlay_neighbors(node)}
        hops = {e.peer.ip: e.ip_hops for e in pet.neighbors()}
        if not expected <= set(hops):
            raise UnconvergedError(f"peer table of {node} has not converged")
        out[node] = statistics.fmean(hops[ip] for ip in expected) if expected else 0.0
    return out


def eta_analytic(topo: Topology, pets: Mapping[NodeId, PeerTable], sizes: NominalSizes | None = None,
                 period_T: float = 5.0) -> float:
    return eta_from_hops(mean_neighbor_hops(topo, pets).values(), sizes, period_T)


# -- discovery ---------------------------------------------------------------


def run_discovery(topo: Topology, gossip: GossipConfig, seed: int, sim_config: SimConfig | None = None,
                  trace: bool = False, distribution: DistributionConfig | None = None,
                  registries: Mapping[NodeId, SfRegistry] | None = None):
    """Gossip until every node's neighbour set covers its overlay adjacency.

    Returns ``(sim, nodes, record)``; gossip cycles are still scheduled.
    """
    sim = Simulator(topo, replace(sim_config or SimConfig(), rng_seed=seed), trace=trace)
    nodes = build_nodes(sim, gossip, distribution, dict(registries or {}))
    pending = set()
    for name, node in nodes.items():
        engine = node.discovery
        engine.expected_neighbors = {nodes[m].identity.pid for m in topo.overlay_neighbors(name)}
        if engine.expected_neighbors:
            pending.add(name)
            engine.on_converged = lambda e: pending.discard(e.node.node_id)
        else:
            engine.converged_after = 0
    sim.schedule_cycles(nodes, gossip.period_T, lambda n: nodes[n].discovery.on_gossip_cycle())
    if pending:
        sim.run(stop=lambda: not pending)
    per_node = {n: nodes[n].discovery.converged_after for n in sorted(nodes)}
    converged = not pending
    record = MetricsRecord(
        "discover", seed, topo.name, pts_size=gossip.pts_size, period_T=gossip.period_T,
        node_nGC={n: v for n, v in per_node.items() if v is not None},
        n_GC=max(per_node.values(), default=0) if converged else None,
        converged=converged, K=len(topo.osp_members),
    )
    return sim, nodes, record


def run_discovery_experiment(scenario: Scenario) -> list[MetricsRecord]:
    topo = scenario.load_topology()
    records = []
    for pts in scenario.pts_sizes:
        gossip = replace(scenario.gossip, pts_size=pts)
        for seed in scenario.seeds:
            sim, _, rec = run_discovery(topo, gossip, seed, scenario.sim, trace=scenario.tracing)
            scenario.save_trace(sim, f"pts{pts}-seed{seed}")
            records.append(rec)
    return records


def run_overhead_experiment(scenario: Scenario) -> list[MetricsRecord]:
    """Analytic eta from converged peer tables, plus the gossip rate measured on the wire."""
    topo = scenario.load_topology()
    records = []
    for seed in scenario.seeds:
        sim, nodes, rec = run_discovery(topo, scenario.gossip, seed, scenario.sim, trace=scenario.tracing)
        rec.experiment = "overhead"
        if rec.converged:
            pets = {n: node.discovery.pet for n, node in nodes.items()}
            v = mean_neighbor_hops(topo, pets)
            rec.v_mean = statistics.fmean(v.values()) if v else 0.0
            rec.eta = eta_from_hops(v.values(), scenario.sizes, scenario.gossip.period_T)
            window = scenario.measure_cycles * scenario.gossip.period_T
            before = sim.ledger.family_total("gossip.")
            sim.run(until=sim.now + window)
            rec.eta_measured = (sim.ledger.family_total("gossip.") - before) * 8 / window
        scenario.save_trace(sim, f"seed{seed}")
        records.append(rec)
    return records


def sample_members(topo: Topology, fraction: float, rng: random.Random) -> Topology:
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    count = max(2, round(fraction * len(topo.nodes)))
    return topo.with_members(rng.sample(topo.nodes, count) if count < len(topo.nodes) else topo.nodes)


def run_partial_deployment_experiment(scenario: Scenario) -> list[MetricsRecord]:
    base = load_topology(scenario.topology)
    records = []
    for fraction in scenario.fractions:
        for seed in scenario.seeds:
            topo = sample_members(base, fraction, random.Random(f"{seed}:{fraction}"))
            sim, nodes, rec = run_discovery(topo, scenario.gossip, seed, scenario.sim, trace=scenario.tracing)
            scenario.save_trace(sim, f"f{fraction}-seed{seed}")
            rec.experiment = "partial"
            rec.fraction = fraction
            if rec.converged:
                v = mean_neighbor_hops(topo, {n: node.discovery.pet for n, node in nodes.items()})
                rec.v_mean = statistics.fmean(v.values())
                rec.eta = eta_from_hops(v.values(), scenario.sizes, scenario.gossip.period_T)
            records.append(rec)
    return records


# -- distribution ------------------------------------------------------------


def sample_pairs(topo: Topology, per_group: int, rng: random.Random) -> dict[int, list[tuple[NodeId, NodeId]]]:
    """Member pairs grouped by IP distance; groups larger than ``per_group`` are sampled."""
    groups: dict[int, list[tuple[NodeId, NodeId]]] = defaultdict(list)
    for a, b in itertools.combinations(sorted(topo.osp_members), 2):
        groups[topo.ip_distance(a, b)].append((a, b))
    return {L: (pairs if len(pairs) <= per_group else sorted(rng.sample(pairs, per_group)))
            for L, pairs in sorted(groups.items())}


def probe_session(sim: Simulator, nodes: Mapping[NodeId, OspNode], src: NodeId, dst: NodeId, r: int,
                  payload: int, seed: int = 0) -> MetricsRecord:
    """Submit one probe and run the simulator until the network is idle again."""
    topo = sim.topology
    msg = SaMessage(SaKind.PROBE, PROBE_SERVICE, bytes(payload))
    sid = nodes[src].distribution.submit(msg, topo.address(dst), r)
    sim.run()
    result = nodes[src].distribution.results.get(sid)
    coverage = frozenset(n for n, node in nodes.items() if node.distribution.deliveries[sid])
    oracle = frozenset(off_path_domain_oracle(topo, topo.shortest_path(src, dst), r))
    return MetricsRecord(
        "distribute", seed, topo.name, src=src, dst=dst, L=topo.ip_distance(src, dst), r=r,
        bytes_on_wire=sim.ledger.by_session.get(sid, 0), codec_bytes=sim.ledger.codec_by_session.get(sid, 0),
        coverage=coverage, oracle=oracle,
        completion_time=result.duration if result else None,
        complete=result.complete if result else False,
        terminated=result is not None and not any(sid in n.distribution.sessions for n in nodes.values()),
    )


def run_distribution_experiment(scenario: Scenario) -> list[MetricsRecord]:
    topo = scenario.load_topology()
    records = []
    for seed in scenario.seeds:
        sim, nodes, pre = run_discovery(topo, scenario.gossip, seed, scenario.sim, trace=scenario.tracing,
                                        distribution=scenario.distribution)
        if not pre.converged:
            raise UnconvergedError(f"discovery did not converge for seed {seed}")
        sim.stop_cycles()
        sim.run()
        groups = sample_pairs(topo, scenario.pairs_per_group, random.Random(seed))
        for L, pairs in groups.items():
            for src, dst in pairs:
                for r in scenario.radii:
                    rec = probe_session(sim, nodes, src, dst, r, scenario.payload, seed)
                    if scenario.sim.loss_probability == 0 and rec.coverage != rec.oracle:
                        raise OracleMismatch(
                            f"{src}->{dst} r={r}: missing {sorted(rec.oracle - rec.coverage)}, "
                            f"extra {sorted(rec.coverage - rec.oracle)}")
                    records.append(rec)
        scenario.save_trace(sim, f"seed{seed}")
    return records


def run_experiment(scenario: Scenario) -> list[MetricsRecord]:
    runner = {
        "discover": run_discovery_experiment,
        "sweep": run_discovery_experiment,
        "distribute": run_distribution_experiment,
        "overhead": run_overhead_experiment,
        "partial": run_partial_deployment_experiment,
    }[scenario.kind]
    return runner(scenario)


# -- aggregation and output --------------------------------------------------


def mean_ci95(values: Sequence[float]) -> tuple[float, float, float]:
    """Mean with a Student-t 95% interval; NaN bounds for a single value."""
    values = list(values)
    if not values:
        return math.nan, math.nan, math.nan
    m = statistics.fmean(values)
    if len(values) < 2:
        return m, math.nan, math.nan
    sem = statistics.stdev(values) / math.sqrt(len(values))
    if sem == 0:
        return m, m, m
    lo, hi = stats.t.interval(0.95, len(values) - 1, loc=m, scale=sem)
    return m, float(lo), float(hi)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return "" if math.isnan(value) else f"{value:.6f}"
    if isinstance(value, (set, frozenset)):
        return " ".join(sorted(value))
    return str(value)


SCHEMAS = {
    "discovery_runs": ("pts_size", "seed", "n_GC", "T_GD", "converged", "K"),
    "discovery_nodes": ("pts_size", "seed", "node", "n_GC", "T_GD"),
    "discovery_summary": ("pts_size", "runs", "converged", "mean_nGC", "ci95_lo", "ci95_hi", "min_nGC",
                          "max_nGC", "T_GD"),
    "distribution_sessions": ("seed", "L", "r", "src", "dst", "bytes_on_wire", "codec_bytes", "completion_time", "complete",
                              "terminated", "coverage_size", "oracle_size", "coverage_ratio", "coverage"),
    "distribution_summary": ("L", "r", "pairs", "mean_bytes", "ci95_lo", "ci95_hi", "mean_codec_bytes", "mean_completion_time",
                             "max_completion_time", "mean_coverage_ratio"),
    "overhead_runs": ("seed", "K", "n_GC", "v_mean", "eta_analytic", "eta_measured"),
    "partial_runs": ("fraction", "seed", "K", "v_mean", "eta_analytic", "converged"),
    "partial_summary": ("fraction", "runs", "mean_K", "mean_v", "mean_eta", "ci95_lo", "ci95_hi"),
}
TABLES_FOR = {
    "discover": ("discovery_runs", "discovery_nodes", "discovery_summary"),
    "sweep": ("discovery_runs", "discovery_nodes", "discovery_summary"),
    "distribute": ("distribution_sessions", "distribution_summary"),
    "overhead": ("overhead_runs",),
    "partial": ("partial_runs", "partial_summary"),
}


def _discovery_tables(records):
    runs, nodes, summary = [], [], []
    by_pts = defaultdict(list)
    for rec in records:
        runs.append((rec.pts_size, rec.seed, rec.n_GC, rec.T_GD, rec.converged, rec.K))
        for node, n in sorted(rec.node_nGC.items()):
            nodes.append((rec.pts_size, rec.seed, node, n, n * rec.period_T))
        by_pts[rec.pts_size].append(rec)
    for pts, recs in sorted(by_pts.items()):
        done = [r.n_GC for r in recs if r.converged]
        m, lo, hi = mean_ci95(done)
        period = recs[0].period_T
        summary.append((pts, len(recs), len(done), m, lo, hi, min(done, default=None), max(done, default=None),
                        m * period))
    return {"discovery_runs": runs, "discovery_nodes": nodes, "discovery_summary": summary}


def group_distribution(records) -> list[tuple]:
    groups = defaultdict(list)
    for rec in records:
        groups[(rec.L, rec.r)].append(rec)
    rows = []
    for (L, r), recs in sorted(groups.items()):
        m, lo, hi = mean_ci95([x.bytes_on_wire for x in recs])
        times = [x.completion_time for x in recs if x.completion_time is not None]
        ratios = [x.coverage_ratio for x in recs if x.coverage_ratio is not None]
        rows.append((L, r, len(recs), m, lo, hi, statistics.fmean(x.codec_bytes for x in recs),
                     statistics.fmean(times) if times else None,
                     max(times, default=None), statistics.fmean(ratios) if ratios else None))
    return rows


def _distribution_tables(records):
    sessions = [(x.seed, x.L, x.r, x.src, x.dst, x.bytes_on_wire, x.codec_bytes, x.completion_time, x.complete, x.terminated,
                 len(x.coverage), len(x.oracle), x.coverage_ratio, x.coverage) for x in records]
    return {"distribution_sessions": sessions, "distribution_summary": group_distribution(records)}


def _overhead_tables(records):
    return {"overhead_runs": [(x.seed, x.K, x.n_GC, x.v_mean, x.eta, x.eta_measured) for x in records]}


def group_partial(records) -> list[tuple]:
    by_fraction = defaultdict(list)
    for rec in records:
        if rec.eta is not None:
            by_fraction[rec.fraction].append(rec)
    rows = []
    for fraction, recs in sorted(by_fraction.items()):
        m, lo, hi = mean_ci95([x.eta for x in recs])
        rows.append((fraction, len(recs), statistics.fmean(x.K for x in recs),
                     statistics.fmean(x.v_mean for x in recs), m, lo, hi))
    return rows


def _partial_tables(records):
    runs = [(x.fraction, x.seed, x.K, x.v_mean, x.eta, x.converged) for x in records]
    return {"partial_runs": runs, "partial_summary": group_partial(records)}


def tabulate(kind: str, records: Sequence[MetricsRecord]) -> dict[str, list[tuple]]:
    builder = {
        "discover": _discovery_tables, "sweep": _discovery_tables, "distribute": _distribution_tables,
        "overhead": _overhead_tables, "partial": _partial_tables,
    }[kind]
    return builder(records)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def emit_results(kind: str, records: Sequence[MetricsRecord], destination: str | Path) -> list[Path]:
    """Write one CSV per table of ``kind``; an empty record set gives header-only files."""
    out = Path(destination)
    out.mkdir(parents=True, exist_ok=True)
    tables = tabulate(kind, records)
    written = []
    for name in TABLES_FOR[kind]:
        path = out / f"{name}.csv"
        write_csv(path, SCHEMAS[name], tables.get(name, []))
        written.append(path)
    return written
