import json

import numpy as np
import pytest

from gridwatch import (
    AdmittanceMatrix,
    Branch,
    DeadIslandError,
    GridTopology,
    InputError,
    apply_outage,
    build_admittance,
    eight_bus_loop,
    grid_from_json,
    grid_to_json,
    random_mesh,
    random_radial,
    reduced_admittance,
)
from gridwatch.grid import chain_grid, merge_parallel

from conftest import adjacency_oracle


def test_two_bus_single_branch_sign_convention():
    top = GridTopology(2, (Branch(1, 2, 1 + 0j),))
    y = build_admittance(top)
    assert np.allclose(y.matrix, [[1, 1], [1, 1]])
    assert np.allclose(y.nodal, [[1, -1], [-1, 1]])
    assert "Y_ii" in y.convention or "dI_i" in y.convention


def test_nodal_round_trip():
    top = random_mesh(15, extra_branches=3, seed=4)
    y = build_admittance(top)
    back = AdmittanceMatrix.from_nodal(y.nodal)
    assert np.allclose(back.matrix, y.matrix)


def test_eight_bus_loop_has_chord_entries():
    y = build_admittance(eight_bus_loop())
    assert y.matrix[1, 5] != 0  # bus 2 - bus 6
    assert y.matrix[1, 3] != 0  # bus 2 - bus 4
    # chords carry the same admittance as branch 7-8
    assert y.matrix[1, 5] == y.matrix[6, 7]


def test_random_tree_diagonal_is_degree_times_admittance():
    y_val = 2 - 1j
    top = random_radial(10, seed=3, admittance=y_val)
    y = build_admittance(top)
    degree = adjacency_oracle(top).sum(axis=1)
    # neighbor-summation oracle
    for i in range(10):
        acc = 0j
        for br in top.branches:
            if i + 1 in (br.from_bus, br.to_bus):
                acc += br.admittance
        assert acc == pytest.approx(degree[i] * y_val)
        assert y.matrix[i, i] == pytest.approx(acc)


def test_apply_outage_zeros_offdiagonals_and_repairs_diagonal():
    top = eight_bus_loop()
    out = apply_outage(top, [(3, 4), (2, 6)])
    y0 = build_admittance(top)
    y1 = build_admittance(out)
    assert y1.matrix[2, 3] == 0 and y1.matrix[1, 5] == 0
    # manual zeroing + diagonal repair oracle
    manual = y0.matrix.copy()
    for a, b in [(3, 4), (2, 6)]:
        yv = manual[a - 1, b - 1]
        manual[a - 1, b - 1] = manual[b - 1, a - 1] = 0
        manual[a - 1, a - 1] -= yv
        manual[b - 1, b - 1] -= yv
    assert np.allclose(y1.matrix, manual)


def test_apply_outage_empty_is_identity():
    top = eight_bus_loop()
    assert apply_outage(top, []) == top


def test_apply_outage_splits_chain():
    top = chain_grid(5)
    out = apply_outage(top, [(2, 3)])
    assert out.components() == [[1, 2], [3, 4, 5]]


def test_apply_outage_unknown_pair_rejected():
    with pytest.raises(InputError):
        apply_outage(chain_grid(5), [(1, 5)])
    # already out-of-service branch is no longer in service
    out = apply_outage(chain_grid(5), [(2, 3)])
    with pytest.raises(InputError):
        apply_outage(out, [(2, 3)])


def test_reduced_two_bus():
    top = GridTopology(2, (Branch(1, 2, 1 + 0j),))
    red = reduced_admittance(build_admittance(top), slack=1)
    assert red.shape == (1, 1)
    assert red[0, 0] == 1 + 0j


def test_reduced_eight_bus_symmetric_zero_pattern():
    top = eight_bus_loop()
    red = reduced_admittance(build_admittance(top), slack=1)
    assert red.shape == (7, 7)
    assert np.allclose(red, red.T)
    adj = adjacency_oracle(top)[1:, 1:]
    assert np.array_equal(np.abs(red) > 0, adj | np.eye(7, dtype=bool))


def test_reduced_dead_island_flagged():
    out = apply_outage(chain_grid(5), [(2, 3)])
    with pytest.raises(DeadIslandError) as err:
        reduced_admittance(build_admittance(out), slack=1)
    assert err.value.buses == (3, 4, 5)


def test_zero_pattern_matches_adjacency_many_random_grids():
    rng = np.random.default_rng(99)
    for trial in range(1000):
        m = int(rng.integers(2, 51))
        if trial % 2:
            top = random_radial(m, seed=trial)
        else:
            extra = int(rng.integers(0, max(1, m // 3)))
            top = random_mesh(m, extra_branches=extra, seed=trial)
        y = build_admittance(top)
        adj = adjacency_oracle(top)
        off = ~np.eye(m, dtype=bool)
        assert np.array_equal((np.abs(y.matrix) > 0) & off, adj)


def test_branch_order_permutation_invariance():
    top = random_mesh(20, extra_branches=5, seed=8)
    y0 = build_admittance(top).matrix
    rng = np.random.default_rng(0)
    order = rng.permutation(len(top.branches))
    shuffled = GridTopology(20, tuple(top.branches[i] for i in order))
    assert np.allclose(build_admittance(shuffled).matrix, y0)


def test_duplicate_branch_pair_rejected_and_merge_helper():
    with pytest.raises(InputError):
        GridTopology(3, (Branch(1, 2, 1 + 0j), Branch(2, 1, 2 + 0j), Branch(2, 3, 1 + 0j)))
    merged = merge_parallel([Branch(1, 2, 1 + 0j), Branch(2, 1, 2 + 0j)])
    assert len(merged) == 1
    assert merged[0].admittance == 3 + 0j


def test_grid_validation_errors():
    with pytest.raises(InputError):
        GridTopology(1, ())
    with pytest.raises(InputError):
        GridTopology(3, (Branch(1, 4, 1 + 0j),))
    with pytest.raises(InputError):
        Branch(2, 2, 1 + 0j)
    with pytest.raises(InputError):
        Branch(1, 2, 0j)


def test_json_round_trip(tmp_path):
    top = eight_bus_loop()
    doc = grid_to_json(top)
    assert doc["format"] == "gridwatch-grid-v1"
    again = grid_from_json(json.loads(json.dumps(doc)))
    assert again == top
    with pytest.raises(InputError):
        grid_from_json({"format": "something-else", "buses": 2, "branches": []})


def test_catalog_grids_connected_uniform(catalog_grids):
    assert set(catalog_grids) >= {"8bus_radial", "8bus_loop"}
    for name, top in catalog_grids.items():
        assert top.is_connected(), name
        assert top.bus_count <= 50
        values = {br.admittance for br in top.branches}
        assert len(values) == 1, f"{name} should use one uniform branch admittance"
