"""AC power flow (Newton-Raphson, polar form) and the linear sensitivity map.

All non-slack buses are PQ buses; per-unit quantities throughout. Pure
functions of their inputs, safe for concurrent replication use.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DeadIslandError, InputError, NumericError
from .grid import AdmittanceMatrix, GridTopology, build_admittance, reduced_admittance

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 50


@dataclass(frozen=True)
class PowerFlowSolution:
    """Converged AC state: complex voltage per bus (1-based order)."""

    voltages: np.ndarray
    iterations: int
    max_mismatch: float

    def magnitudes(self) -> np.ndarray:
        return np.abs(self.voltages)

    def angles(self) -> np.ndarray:
        return np.angle(self.voltages)


def solve_ac(
    topology: GridTopology,
    injections: np.ndarray,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> PowerFlowSolution:
    """Solve the AC power flow from a flat start.

    `injections` is the complex net injected power (p + jq, loads negative)
    per non-slack bus, ordered by ascending bus number. Raises NumericError on
    non-convergence (carrying the last mismatch) or a singular Jacobian, and
    DeadIslandError when some bus has no path to the slack.
    """
    injections = np.asarray(injections, dtype=complex)
    non_slack = topology.non_slack()
    if injections.shape != (len(non_slack),):
        raise InputError(
            f"expected {len(non_slack)} injections (one per non-slack bus), got {injections.shape}"
        )
    ybus = build_admittance(topology)
    reduced_admittance(ybus, topology.slack)  # connectivity check only
    s_sched = np.zeros(topology.bus_count, dtype=complex)
    s_sched[[b - 1 for b in non_slack]] = injections
    v, iterations, mismatch = _newton(
        ybus.nodal,
        s_sched,
        pq=[b - 1 for b in non_slack],
        ref=topology.slack - 1,
        ref_voltage=1.0 + 0.0j,
        tol=tol,
        max_iter=max_iter,
    )
    return PowerFlowSolution(voltages=v, iterations=iterations, max_mismatch=mismatch)


def solve_component(
    nodal: np.ndarray,
    component,
    reference: int,
    ref_voltage: complex,
    injections_by_bus: dict[int, complex],
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> dict[int, complex]:
    """AC solve of one island with an arbitrary reference bus.

    `component` lists 1-based buses; the reference holds `ref_voltage`.
    Returns complex voltage by bus.
    """
    comp = sorted(component)
    idx = [b - 1 for b in comp]
    sub = nodal[np.ix_(idx, idx)]
    s_sched = np.zeros(len(comp), dtype=complex)
    pq = []
    for pos, b in enumerate(comp):
        if b == reference:
            continue
        pq.append(pos)
        s_sched[pos] = injections_by_bus.get(b, 0.0)
    v, _, _ = _newton(sub, s_sched, pq=pq, ref=comp.index(reference),
                      ref_voltage=ref_voltage, tol=tol, max_iter=max_iter)
    return {b: v[pos] for pos, b in enumerate(comp)}


def _newton(nodal, s_sched, pq, ref, ref_voltage, tol, max_iter):
    n = nodal.shape[0]
    vm = np.ones(n)
    th = np.zeros(n)
    vm[ref] = abs(ref_voltage)
    th[ref] = np.angle(ref_voltage)
    npq = len(pq)
    ym = np.abs(nodal)
    ya = np.angle(nodal)
    iterations = 0
    mismatch = np.inf
    for iterations in range(1, max_iter + 1):
        v = vm * np.exp(1j * th)
        s_calc = v * np.conj(nodal @ v)
        ds = s_sched - s_calc
        mis = np.concatenate([ds[pq].real, ds[pq].imag])
        mismatch = float(np.max(np.abs(mis))) if mis.size else 0.0
        if mismatch <= tol:
            return v, iterations, mismatch
        jac = _jacobian(nodal, ym, ya, vm, th, s_calc, pq, npq)
        try:
            dx = np.linalg.solve(jac, mis)
        except np.linalg.LinAlgError as exc:
            raise NumericError(f"singular power-flow Jacobian at iteration {iterations}") from exc
        if not np.all(np.isfinite(dx)):
            raise NumericError(f"power-flow update diverged at iteration {iterations}")
        th[pq] += dx[:npq]
        vm[pq] += dx[npq:]
    raise NumericError(
        f"power flow did not converge in {max_iter} iterations (last mismatch {mismatch:.3e})"
    )


def _jacobian(nodal, ym, ya, vm, th, s_calc, pq, npq):
    # dP/dth, dP/d|v|, dQ/dth, dQ/d|v| blocks over PQ buses, polar form.
    jac = np.zeros((2 * npq, 2 * npq))
    p = s_calc.real
    q = s_calc.imag
    for a, i in enumerate(pq):
        for b, j in enumerate(pq):
            if i == j:
                jac[a, b] = -q[i] - vm[i] ** 2 * nodal[i, i].imag
                jac[a, npq + b] = p[i] / vm[i] + vm[i] * nodal[i, i].real
                jac[npq + a, b] = p[i] - vm[i] ** 2 * nodal[i, i].real
                jac[npq + a, npq + b] = q[i] / vm[i] - vm[i] * nodal[i, i].imag
            elif ym[i, j] != 0.0:
                ang = ya[i, j] + th[j] - th[i]
                s, c = np.sin(ang), np.cos(ang)
                jac[a, b] = -vm[i] * vm[j] * ym[i, j] * s
                jac[a, npq + b] = vm[i] * ym[i, j] * c
                jac[npq + a, b] = -vm[i] * vm[j] * ym[i, j] * c
                jac[npq + a, npq + b] = -vm[i] * ym[i, j] * s
    return jac


def linear_sensitivity(topology: GridTopology) -> np.ndarray:
    """Z = inverse of the slack-reduced nodal matrix: dV = Z * dI.

    Ordered by ascending non-slack bus number. Raises DeadIslandError for
    buses with no path to the slack.
    """
    y = build_admittance(topology)
    y_red = reduced_admittance(y, topology.slack)
    try:
        z = np.linalg.inv(y_red)
    except np.linalg.LinAlgError as exc:
        raise NumericError("reduced admittance matrix is singular") from exc
    return z


def component_sensitivity(nodal: np.ndarray, component, reference: int) -> tuple[list[int], np.ndarray]:
    """Sensitivity of one island relative to its reference bus."""
    from .grid import component_reduction

    buses, sub = component_reduction(nodal, component, reference)
    if sub.size == 0:
        return buses, sub.reshape(0, 0)
    try:
        return buses, np.linalg.inv(sub)
    except np.linalg.LinAlgError as exc:
        raise DeadIslandError(buses) from exc
