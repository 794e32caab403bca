"""Voltage time-series generation under pre/post-outage regimes.

Voltages evolve as an AC (or flat) base point plus the linear response to a
random walk of injection noise; increments therefore follow the linear
sensitivity map within each regime, and the regime switch at the outage step
carries the base-point jump. Magnitude streams are derived from the true
complex voltages. Generation is a pure function of (inputs, seed).

Two injection noise models are available:

* ``branch``: independent complex flow fluctuations on every in-service
  branch, weighted by branch admittance magnitude. Bus injection increments
  are the incidence-combined branch noise, so their covariance equals the
  branch-weighted reduced Laplacian. Under a uniform branch admittance this
  makes the voltage-increment precision matrix vanish exactly at non-adjacent
  bus pairs, which is what pairwise conditional-correlation localization
  relies on. Default for all catalog scenarios.
* ``bus``: independent real Gaussian injection increments per non-slack bus
  with configurable variances.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .detect import GaussianModel
from .errors import DeadIslandError, InputError
from .grid import GridTopology, apply_outage, build_admittance
from .powerflow import component_sensitivity, solve_ac, solve_component

SCENARIO_KINDS = ("mesh", "radial_with_der", "radial_dead_island", "mean_shift_fault")
ANSI_NOISE_PCT = 0.005
MAX_NOISE_PCT = 0.01
DEFAULT_BRANCH_SCALE = 1e-6


@dataclass(frozen=True)
class InjectionModel:
    """Noise model for current-injection increments."""

    kind: str = "branch"
    scale: float = DEFAULT_BRANCH_SCALE
    variances: np.ndarray | None = None
    mean: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("branch", "bus"):
            raise InputError(f"unknown injection model kind {self.kind!r}")
        if self.kind == "branch":
            if self.scale <= 0:
                raise InputError("branch noise scale must be positive")
        else:
            if self.variances is None:
                raise InputError("bus injection model requires per-bus variances")
            var = np.asarray(self.variances, dtype=float)
            if var.ndim != 1 or np.any(var <= 0):
                raise InputError("bus injection variances must be a vector of positives")
            object.__setattr__(self, "variances", var)
            if self.mean is not None:
                mean = np.asarray(self.mean, dtype=float)
                if mean.shape != var.shape:
                    raise InputError("injection mean shape must match variances")
                object.__setattr__(self, "mean", mean)


def sample_injections(model: InjectionModel, n_steps: int, seed: int,
                      topology: GridTopology | None = None) -> np.ndarray:
    """I.i.d. injection increments, one row per step, one column per non-slack bus.

    Real-valued for the bus model, complex for the branch model (which needs
    the topology for its incidence structure). Deterministic given the seed.
    """
    if n_steps < 1:
        raise InputError(f"n_steps must be >= 1, got {n_steps}")
    rng = np.random.default_rng(seed)
    if model.kind == "bus":
        var = model.variances
        out = rng.standard_normal((n_steps, var.size)) * np.sqrt(var)
        if model.mean is not None:
            out = out + model.mean
        return out
    if topology is None:
        raise InputError("branch injection model requires a topology")
    branches = topology.in_service()
    w = model.scale * np.abs([br.admittance for br in branches])
    phi = _circular_noise(rng, (n_steps, len(branches)))
    incidence = np.zeros((len(branches), topology.bus_count))
    for bi, br in enumerate(branches):
        incidence[bi, br.from_bus - 1] = 1.0
        incidence[bi, br.to_bus - 1] = -1.0
    ns = [b - 1 for b in topology.non_slack()]
    return (phi * np.sqrt(w)) @ incidence[:, ns]


def _circular_noise(rng, shape) -> np.ndarray:
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return (re + 1j * im) / np.sqrt(2.0)


@dataclass(frozen=True)
class OutageScenario:
    """One outage event schedule plus measurement conditions."""

    kind: str = "mesh"
    outage_branches: tuple = ()
    outage_time: int | None = None
    rho: float = 0.04
    noise_pct: float = 0.0
    sample_period: float = 3600.0
    load_p: float = 0.0
    pf_range: tuple = (0.8, 1.0)
    der_buses: tuple = ()
    fault_drop: float = 0.0
    fault_buses: tuple = ()

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise InputError(f"unknown scenario kind {self.kind!r}, want one of {SCENARIO_KINDS}")
        if self.outage_time is not None and self.outage_time < 1:
            raise InputError(f"outage_time must be >= 1, got {self.outage_time}")
        if not 0.0 < self.rho < 1.0:
            raise InputError(f"rho must lie in (0, 1), got {self.rho}")
        if self.noise_pct < 0 or self.noise_pct > MAX_NOISE_PCT:
            raise InputError(f"noise_pct must lie in [0, {MAX_NOISE_PCT}], got {self.noise_pct}")
        if self.noise_pct > ANSI_NOISE_PCT:
            warnings.warn(
                f"noise_pct {self.noise_pct} exceeds the ANSI C12.20 class 0.5 range "
                f"({ANSI_NOISE_PCT})",
                stacklevel=2,
            )
        if self.load_p < 0:
            raise InputError("load_p must be nonnegative")
        if self.kind == "mean_shift_fault":
            if self.outage_branches:
                raise InputError("mean_shift_fault keeps the topology; outage_branches must be empty")
            if not self.fault_buses or self.fault_drop <= 0:
                raise InputError("mean_shift_fault requires fault_buses and a positive fault_drop")
        object.__setattr__(self, "outage_branches",
                           tuple(tuple(sorted(p)) for p in self.outage_branches))
        object.__setattr__(self, "der_buses", tuple(self.der_buses))
        object.__setattr__(self, "fault_buses", tuple(self.fault_buses))


@dataclass(frozen=True)
class IncrementStream:
    """Meter voltage series and the increment views the detector consumes.

    `voltages` has one row per reading (N+1 rows for N increments) and one
    column per bus, slack included. Increment n is reading n minus reading
    n-1; readings at and after `outage_step` are post-outage.
    """

    voltages: np.ndarray
    sample_period: float
    slack: int = 1
    outage_step: int | None = None
    dead_buses: tuple = ()
    island_refs: tuple = ()
    scenario_kind: str = "mesh"
    seed: int | None = None

    def __post_init__(self):
        self.voltages.setflags(write=False)

    @property
    def n_steps(self) -> int:
        return self.voltages.shape[0] - 1

    @property
    def bus_count(self) -> int:
        return self.voltages.shape[1]

    def non_slack(self) -> list[int]:
        return [b for b in range(1, self.bus_count + 1) if b != self.slack]

    def magnitudes(self) -> np.ndarray:
        return np.abs(self.voltages)

    def delta_v(self) -> np.ndarray:
        return np.diff(self.voltages, axis=0)

    def delta_vmag(self) -> np.ndarray:
        return np.diff(self.magnitudes(), axis=0)

    def detector_matrix(self, mode: str = "magnitude") -> np.ndarray:
        """Real-valued increment matrix over non-slack buses for detection."""
        cols = [b - 1 for b in self.non_slack()]
        if mode == "magnitude":
            return self.delta_vmag()[:, cols]
        if mode == "complex":
            dv = self.delta_v()[:, cols]
            return np.hstack([dv.real, dv.imag])
        raise InputError(f"unknown mode {mode!r}, want 'magnitude' or 'complex'")

    def resample(self, factor: int) -> "IncrementStream":
        """Decimate voltages by `factor` and re-difference."""
        if factor < 1 or int(factor) != factor:
            raise InputError(f"resample factor must be a positive integer, got {factor}")
        factor = int(factor)
        if factor == 1:
            return self
        if self.n_steps % factor != 0:
            raise InputError(
                f"factor {factor} does not divide the {self.n_steps}-step stream"
            )
        step = None
        if self.outage_step is not None:
            step = -(-self.outage_step // factor)
        return replace(
            self,
            voltages=self.voltages[::factor].copy(),
            sample_period=self.sample_period * factor,
            outage_step=step,
        )


def scenario_injections(topology: GridTopology, scenario: OutageScenario, seed) -> np.ndarray:
    """Complex scheduled power per non-slack bus: uniform load with sampled pf."""
    n = len(topology.non_slack())
    if scenario.load_p == 0.0:
        return np.zeros(n, dtype=complex)
    rng = np.random.default_rng(seed)
    pf = rng.uniform(*scenario.pf_range, size=n)
    q = scenario.load_p * np.tan(np.arccos(pf))
    return -(scenario.load_p + 1j * q)


def _split_components(topology: GridTopology, der_buses, allow_islands: bool):
    """Live components as (buses, reference) pairs plus dead buses."""
    live = []
    dead = []
    for comp in topology.components():
        if topology.slack in comp:
            live.append((comp, topology.slack))
            continue
        ders = sorted(set(comp) & set(der_buses))
        if ders:
            live.append((comp, ders[0]))
        else:
            dead.extend(comp)
    if dead and not allow_islands:
        raise DeadIslandError(dead)
    return live, tuple(sorted(dead))


def _response_matrix(topology: GridTopology, model: InjectionModel, live,
                     state_branches) -> np.ndarray:
    """Map from cumulative noise state to complex voltage deviation, all buses.

    The state space is the pre-outage branch list (branch model) or the
    non-slack bus list (bus model); stale state entries get zero columns.
    """
    m = topology.bus_count
    nodal = build_admittance(topology).nodal
    alive = {br.pair for br in topology.in_service()}
    if model.kind == "branch":
        r = np.zeros((m, len(state_branches)), dtype=complex)
        w = model.scale * np.abs([br.admittance for br in state_branches])
        for comp, ref in live:
            buses, z = component_sensitivity(nodal, comp, ref)
            loc = {b: i for i, b in enumerate(buses)}
            rows = [b - 1 for b in buses]
            in_comp = set(comp)
            for bi, br in enumerate(state_branches):
                if br.pair not in alive or br.from_bus not in in_comp:
                    continue
                col = np.zeros(len(buses), dtype=complex)
                if br.from_bus in loc:
                    col += z[:, loc[br.from_bus]]
                if br.to_bus in loc:
                    col -= z[:, loc[br.to_bus]]
                r[rows, bi] += np.sqrt(w[bi]) * col
        return r
    non_slack = topology.non_slack()
    r = np.zeros((m, len(non_slack)), dtype=complex)
    state_col = {b: i for i, b in enumerate(non_slack)}
    for comp, ref in live:
        buses, z = component_sensitivity(nodal, comp, ref)
        rows = [b - 1 for b in buses]
        for j, b in enumerate(buses):
            r[rows, state_col[b]] = z[:, j]
    return r


def generate_stream(topology_pre: GridTopology, scenario: OutageScenario,
                    model: InjectionModel, n_steps: int, seed: int) -> IncrementStream:
    """Generate N increment steps (N+1 meter readings) for one scenario run."""
    if n_steps < 1:
        raise InputError(f"n_steps must be >= 1, got {n_steps}")
    if not topology_pre.is_connected():
        raise InputError("pre-outage grid must be connected")
    root = np.random.SeedSequence(seed)
    seed_load, seed_lambda, seed_process, seed_meter = root.spawn(4)

    lam = scenario.outage_time
    if lam is None:
        lam = int(np.random.default_rng(seed_lambda).geometric(scenario.rho))

    injections = scenario_injections(topology_pre, scenario, seed_load)
    loaded = scenario.load_p > 0.0
    m = topology_pre.bus_count
    if loaded:
        base_pre = solve_ac(topology_pre, injections).voltages
    else:
        base_pre = np.ones(m, dtype=complex)

    if scenario.kind == "mean_shift_fault":
        topo_post = topology_pre
    else:
        topo_post = apply_outage(topology_pre, scenario.outage_branches)
    allow_islands = scenario.kind in ("radial_with_der", "radial_dead_island")
    live_post, dead = _split_components(topo_post, scenario.der_buses, allow_islands)

    base_post = np.zeros(m, dtype=complex)
    inj_by_bus = dict(zip(topology_pre.non_slack(), injections))
    nodal_post = build_admittance(topo_post).nodal
    for comp, ref in live_post:
        if loaded and len(comp) > 1:
            sol = solve_component(nodal_post, comp, ref, base_pre[ref - 1], inj_by_bus)
            for b, v in sol.items():
                base_post[b - 1] = v
        else:
            # unloaded grids stay flat; a single-bus island holds its last voltage
            for b in comp:
                base_post[b - 1] = base_pre[b - 1]
    if scenario.kind == "mean_shift_fault":
        base_post = base_pre.copy()
        for b in scenario.fault_buses:
            v = base_post[b - 1]
            mag = max(abs(v) - scenario.fault_drop, 0.0)
            base_post[b - 1] = mag * np.exp(1j * np.angle(v)) if abs(v) > 0 else 0.0

    state_branches = topology_pre.in_service()
    live_pre = [(sorted(range(1, m + 1)), topology_pre.slack)]
    r_pre = _response_matrix(topology_pre, model, live_pre, state_branches)
    r_post = _response_matrix(topo_post, model, live_post, state_branches)

    rng = np.random.default_rng(seed_process)
    if model.kind == "branch":
        incr = _circular_noise(rng, (n_steps, len(state_branches)))
    else:
        var = model.variances
        if var.size != m - 1:
            raise InputError(
                f"bus injection model has {var.size} variances, grid needs {m - 1}"
            )
        incr = rng.standard_normal((n_steps, var.size)) * np.sqrt(var)
        if model.mean is not None:
            incr = incr + model.mean
    state = np.vstack([np.zeros((1, incr.shape[1])), np.cumsum(incr, axis=0)])

    # Voltage = regime base point + accumulated linear response; the deviation
    # carries across the outage so increments follow the regime's sensitivity
    # exactly and only the base-point jump appears at the switch.
    volts = np.empty((n_steps + 1, m), dtype=complex)
    cut = min(lam, n_steps + 1)
    dev_pre = state[:cut] @ r_pre.T
    volts[:cut] = base_pre + dev_pre
    if cut <= n_steps:
        carry = (state[cut - 1] @ r_pre.T) if cut > 0 else np.zeros(m, dtype=complex)
        responsive = np.zeros(m)
        for comp, ref in live_post:
            for b in comp:
                if b != ref:
                    responsive[b - 1] = 1.0
        dev_post = (state[cut:] - state[cut - 1]) @ r_post.T + carry * responsive
        volts[cut:] = base_post + dev_post
        for b in dead:
            volts[cut:, b - 1] = 0.0

    if scenario.noise_pct > 0:
        u = np.random.default_rng(seed_meter).uniform(
            -scenario.noise_pct, scenario.noise_pct, size=volts.shape
        )
        volts = volts * (1.0 + u)

    refs = tuple(ref for _, ref in live_post if ref != topology_pre.slack)
    return IncrementStream(
        voltages=volts,
        sample_period=scenario.sample_period,
        slack=topology_pre.slack,
        outage_step=lam if lam <= n_steps else None,
        dead_buses=dead,
        island_refs=refs,
        scenario_kind=scenario.kind,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Closed-form increment covariances (small-angle magnitude map)


def magnitude_covariance(topology: GridTopology, model: InjectionModel,
                         der_buses=(), allow_islands: bool = False) -> np.ndarray:
    """Covariance of magnitude increments over non-slack buses.

    Island references and dead buses contribute zero rows/columns; regularize
    before using the result as a Gaussian model.
    """
    live, _ = _split_components(topology, der_buses, allow_islands)
    r = _response_matrix(topology, model, live, topology.in_service())
    r = r[[b - 1 for b in topology.non_slack()]]
    if model.kind == "branch":
        return 0.5 * (r @ r.conj().T).real
    rr = r.real
    return (rr * model.variances) @ rr.T


def complex_covariance(topology: GridTopology, model: InjectionModel,
                       der_buses=(), allow_islands: bool = False) -> np.ndarray:
    """Stacked [Re, Im] covariance of complex increments over non-slack buses.

    The bus model drives both parts with one real noise source, so its stacked
    covariance is rank deficient; the branch model is full rank.
    """
    live, _ = _split_components(topology, der_buses, allow_islands)
    r = _response_matrix(topology, model, live, topology.in_service())
    ns = [b - 1 for b in topology.non_slack()]
    r = r[ns]
    if model.kind == "branch":
        h = r @ r.conj().T
        re, im = 0.5 * h.real, 0.5 * h.imag
        return np.block([[re, -im], [im, re]])
    d = model.variances
    rr, ri = r.real, r.imag
    return np.block([[(rr * d) @ rr.T, (rr * d) @ ri.T],
                     [(ri * d) @ rr.T, (ri * d) @ ri.T]])


def theoretical_models(topology_pre: GridTopology, scenario: OutageScenario,
                       model: InjectionModel, mode: str = "magnitude"):
    """True pre/post increment models (g, f) for a scenario.

    For mean-shift faults the stationary increment distribution does not
    change, so f equals g and detection must learn from data.
    """
    builder = magnitude_covariance if mode == "magnitude" else complex_covariance
    if mode not in ("magnitude", "complex"):
        raise InputError(f"unknown mode {mode!r}")
    cov_pre = builder(topology_pre, model)
    g, _ = GaussianModel.regularized(np.zeros(cov_pre.shape[0]), cov_pre)
    if scenario.kind == "mean_shift_fault":
        return g, g
    topo_post = apply_outage(topology_pre, scenario.outage_branches)
    allow = scenario.kind in ("radial_with_der", "radial_dead_island")
    cov_post = builder(topo_post, model, der_buses=scenario.der_buses, allow_islands=allow)
    f, _ = GaussianModel.regularized(np.zeros(cov_post.shape[0]), cov_post)
    return g, f


# ---------------------------------------------------------------------------
# Measurement CSV interchange


def write_measurements(stream: IncrementStream, path, mode: str = "magnitude") -> None:
    """Write meter readings: `time,bus_1,...` or `time,bus_1_re,bus_1_im,...`."""
    m = stream.bus_count
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if mode == "magnitude":
            writer.writerow(["time"] + [f"bus_{b}" for b in range(1, m + 1)])
            mags = stream.magnitudes()
            for n in range(stream.n_steps + 1):
                writer.writerow([_fmt(n * stream.sample_period)] + [_fmt(x) for x in mags[n]])
        elif mode == "complex":
            header = ["time"]
            for b in range(1, m + 1):
                header += [f"bus_{b}_re", f"bus_{b}_im"]
            writer.writerow(header)
            for n in range(stream.n_steps + 1):
                row = [_fmt(n * stream.sample_period)]
                for x in stream.voltages[n]:
                    row += [_fmt(x.real), _fmt(x.imag)]
                writer.writerow(row)
        else:
            raise InputError(f"unknown mode {mode!r}")


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def read_measurements(path):
    """Read a measurement CSV; returns (times, voltages, mode).

    Magnitude files yield real voltages, complex files complex ones. Malformed
    rows are rejected with their row number.
    """
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty measurement file") from None
        if header[:1] != ["time"]:
            raise InputError(f"{path}: first column must be 'time'")
        if any(c.endswith("_re") for c in header[1:]):
            mode = "complex"
            if (len(header) - 1) % 2 != 0:
                raise InputError(f"{path}: complex file needs re/im column pairs")
            m = (len(header) - 1) // 2
        else:
            mode = "magnitude"
            m = len(header) - 1
        times, rows = [], []
        for idx, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise InputError(f"{path}: row {idx} has {len(row)} fields, want {len(header)}")
            try:
                vals = [float(x) for x in row]
            except ValueError as exc:
                raise InputError(f"{path}: row {idx}: {exc}") from exc
            times.append(vals[0])
            rows.append(vals[1:])
    data = np.asarray(rows)
    if mode == "complex":
        data = data[:, 0::2] + 1j * data[:, 1::2]
    if data.shape[0] < 2:
        raise InputError(f"{path}: need at least two readings to form increments")
    return np.asarray(times), data, mode
