import numpy as np
import pytest

from gridwatch import (
    Branch,
    DeadIslandError,
    GridTopology,
    NumericError,
    apply_outage,
    build_admittance,
    eight_bus_radial,
    linear_sensitivity,
    random_mesh,
    solve_ac,
)
from gridwatch.grid import chain_grid


def gauss_seidel(topology, injections, tol=1e-12, max_iter=200000):
    """Fixed-point power-flow oracle: v_i <- (conj(S_i/v_i) - sum Y_ik v_k) / Y_ii."""
    ybus = build_admittance(topology).nodal
    m = topology.bus_count
    pq = [b - 1 for b in topology.non_slack()]
    s = np.zeros(m, dtype=complex)
    s[pq] = injections
    v = np.ones(m, dtype=complex)
    for _ in range(max_iter):
        worst = 0.0
        for i in pq:
            sigma = ybus[i] @ v - ybus[i, i] * v[i]
            new = (np.conj(s[i] / v[i]) - sigma) / ybus[i, i]
            worst = max(worst, abs(new - v[i]))
            v[i] = new
        if worst < tol:
            return v
    raise AssertionError("Gauss-Seidel oracle did not converge")


def test_zero_injections_flat_one_iteration():
    sol = solve_ac(eight_bus_radial(), np.zeros(7, dtype=complex))
    assert np.allclose(sol.voltages, 1.0)
    assert sol.iterations == 1
    assert sol.max_mismatch == 0.0


def test_two_bus_against_gauss_seidel():
    y = 1.0 / (0.01 + 0.1j)
    top = GridTopology(2, (Branch(1, 2, y),))
    inj = np.array([-(0.1 + 0.02j)])
    sol = solve_ac(top, inj)
    assert abs(sol.voltages[1]) < 1.0
    oracle = gauss_seidel(top, inj)
    assert np.max(np.abs(sol.voltages - oracle)) < 1e-8


def test_eight_bus_light_load_band():
    top = eight_bus_radial()
    inj = np.full(7, -0.01, dtype=complex)
    sol = solve_ac(top, inj)
    mags = sol.magnitudes()
    assert np.all(mags[1:] >= 0.95) and np.all(mags[1:] <= 1.0)
    oracle = gauss_seidel(top, inj)
    assert np.max(np.abs(sol.voltages - oracle)) < 1e-8


def test_newton_matches_gauss_seidel_on_catalog(catalog_grids):
    rng = np.random.default_rng(5)
    for name, top in catalog_grids.items():
        n = len(top.non_slack())
        p = rng.uniform(0.0, 0.1, size=n)
        q = p * np.tan(np.arccos(rng.uniform(0.8, 1.0, size=n)))
        inj = -(p + 1j * q)
        sol = solve_ac(top, inj)
        oracle = gauss_seidel(top, inj, tol=1e-12)
        assert np.max(np.abs(np.abs(sol.voltages) - np.abs(oracle))) < 1e-6, name


def test_power_conservation_at_slack():
    top = eight_bus_radial()
    inj = np.full(7, -(0.05 + 0.01j))
    sol = solve_ac(top, inj, tol=1e-12)
    v = sol.voltages
    ybus = build_admittance(top).nodal
    s_all = v * np.conj(ybus @ v)
    # branch I^2 Z loss oracle
    losses = sum(
        abs(v[br.from_bus - 1] - v[br.to_bus - 1]) ** 2 * np.conj(br.admittance)
        for br in top.branches
    )
    assert abs(np.sum(s_all) - losses) < 1e-8


def test_nonconvergence_reports_mismatch():
    top = GridTopology(2, (Branch(1, 2, 1.0 / (0.01 + 0.1j)),))
    with pytest.raises(NumericError) as err:
        solve_ac(top, np.array([-60.0 + 0j]), max_iter=8)
    assert "mismatch" in str(err.value)


def test_sensitivity_single_branch():
    y = 2.0 - 1.0j
    top = GridTopology(2, (Branch(1, 2, y),))
    z = linear_sensitivity(top)
    assert z.shape == (1, 1)
    assert z[0, 0] == pytest.approx(1.0 / y)


def test_sensitivity_symmetric_and_inverse():
    top = random_mesh(20, extra_branches=5, seed=2)
    z = linear_sensitivity(top)
    assert np.allclose(z, z.T)
    y_red = build_admittance(top).nodal[1:, 1:]
    assert np.max(np.abs(z @ y_red - np.eye(19))) < 1e-10


def test_sensitivity_dead_island_names_buses():
    out = apply_outage(chain_grid(6), [(3, 4)])
    with pytest.raises(DeadIslandError) as err:
        linear_sensitivity(out)
    assert err.value.buses == (4, 5, 6)


def test_outage_sensitivity_matches_woodbury_update():
    # removing branch (a, b) is a rank-one change of the reduced matrix
    top = random_mesh(12, extra_branches=4, seed=21)
    z0 = linear_sensitivity(top)
    non_slack = top.non_slack()
    for br in top.branches:
        if top.slack in (br.from_bus, br.to_bus):
            continue
        post = apply_outage(top, [br.pair])
        if not post.is_connected():
            continue
        u = np.zeros(len(non_slack))
        u[non_slack.index(br.from_bus)] = 1.0
        u[non_slack.index(br.to_bus)] = -1.0
        zu = z0 @ u
        denom = 1.0 / br.admittance - u @ zu
        z_pred = z0 + np.outer(zu, zu) / denom
        assert np.max(np.abs(z_pred - linear_sensitivity(post))) < 1e-9
