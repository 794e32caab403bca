import numpy as np
import pytest

from gridwatch import catalog


@pytest.fixture(scope="session")
def catalog_grids():
    return catalog()


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)


def adjacency_oracle(topology):
    """In-service adjacency by explicit branch enumeration (1-based)."""
    m = topology.bus_count
    adj = np.zeros((m, m), dtype=bool)
    for br in topology.branches:
        if br.in_service:
            adj[br.from_bus - 1, br.to_bus - 1] = True
            adj[br.to_bus - 1, br.from_bus - 1] = True
    return adj
