"""Off-path signaling protocol: gossip discovery, scoped distribution and a simulator to run them."""

from .codec import decode, encode
from .discovery import DiscoveryEngine, GossipConfig, PeerTable
from .distribution import DistributionConfig, DistributionEngine, SfRegistry
from .harness import MetricsRecord, Scenario, emit_results, eta_analytic, run_experiment
from .node import OspNode, build_nodes
from .simnet import SimConfig, Simulator
from .topology import Topology, load_topology, off_path_domain_oracle

__all__ = [
    "DiscoveryEngine", "DistributionConfig", "DistributionEngine", "GossipConfig", "MetricsRecord",
    "OspNode", "PeerTable", "Scenario", "SfRegistry", "SimConfig", "Simulator", "Topology", "build_nodes",
    "decode", "emit_results", "encode", "eta_analytic", "load_topology", "off_path_domain_oracle", "run_experiment",
]
__version__ = "0.1.0"
