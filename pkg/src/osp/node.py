from __future__ import annotations

from .codec import GossipMessage, PeerIdentity, StMessage
from .discovery import DiscoveryEngine, GossipConfig
from .distribution import DistributionConfig, DistributionEngine, SfRegistry
from .simnet import Simulator
from .topology import NodeId


class OspNode:
    """One OSP instance: discovery and distribution engines sharing a PeT."""

    def __init__(self, node_id: NodeId, sim: Simulator, gossip: GossipConfig,
                 distribution: DistributionConfig | None = None, registry: SfRegistry | None = None,
                 tracker: PeerIdentity | None = None, pid: bytes | None = None):
        self.node_id = node_id
        self.sim = sim
        if pid is None:
            pid = sim.rng.getrandbits(64).to_bytes(8, "big")
        self.identity = PeerIdentity(pid, sim.topology.address(node_id))
        self.discovery = DiscoveryEngine(self, gossip, tracker)
        self.distribution = DistributionEngine(self, distribution or DistributionConfig(), registry)
        sim.attach(node_id, self)

    def receive(self, message, hops: int) -> None:
        if isinstance(message, GossipMessage):
            self.discovery.receive(message, hops)
        elif isinstance(message, StMessage):
            self.distribution.receive(message, hops)

    def __repr__(self) -> str:
        return f"OspNode({self.node_id!r})"


def build_nodes(sim: Simulator, gossip: GossipConfig, distribution: DistributionConfig | None = None,
                registries: dict[NodeId, SfRegistry] | None = None) -> dict[NodeId, OspNode]:
    """Create one node per OSP member in sorted order; PIDs come from the run RNG."""
    topo = sim.topology
    members = sorted(topo.osp_members)
    pids = {n: sim.rng.getrandbits(64).to_bytes(8, "big") for n in members}
    tracker = None
    if topo.tracker is not None:
        tracker = PeerIdentity(pids[topo.tracker], topo.address(topo.tracker))
    registries = registries or {}
    return {
        n: OspNode(n, sim, gossip, distribution, registries.get(n), tracker=tracker, pid=pids[n])
        for n in members
    }
