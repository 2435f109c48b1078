import pytest

from osp.discovery import GossipConfig
from osp.distribution import DistributionConfig
from osp.harness import run_discovery
from osp.topology import load_topology


@pytest.fixture(scope="session")
def geant():
    return load_topology("geant.yaml")


@pytest.fixture(scope="session")
def line5():
    return load_topology("line5.txt")


@pytest.fixture(scope="session")
def star5():
    return load_topology("star5.txt")


def converged_network(topo, seed=0, distribution=None, sim_config=None, trace=True, registries=None):
    """Discover to convergence, then stop gossip and drain in-flight exchanges."""
    sim, nodes, rec = run_discovery(topo, GossipConfig(), seed, sim_config, trace=trace,
                                    distribution=distribution or DistributionConfig(), registries=registries)
    assert rec.converged
    sim.stop_cycles()
    sim.run()
    return sim, nodes


VERDICTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
