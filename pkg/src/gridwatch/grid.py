"""Grid topology, bus admittance matrices, and the built-in test-grid catalog.

Buses are numbered 1..M; bus 1 is the slack (substation) bus by default.
Branch admittances are complex, in per-unit siemens.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import DeadIslandError, InputError

GRID_FORMAT = "gridwatch-grid-v1"

# Sign convention for AdmittanceMatrix.matrix: the stored off-diagonal entry
# Y[i,k] is the positive branch admittance y_ik and the diagonal is the row sum
# of incident branch admittances, so nodal current balance reads
#   dI_i = dV_i * Y[i,i] - sum_e dV_e * Y[i,e].
# The conventional nodal Ybus (negative off-diagonals) is `nodal`.
SIGN_CONVENTION = "dI_i = dV_i*Y_ii - sum_e dV_e*Y_ie; stored off-diagonals positive"

# Uniform branch admittance used by every catalog grid (z = 0.04 + 0.08j p.u.).
CATALOG_ADMITTANCE = 1.0 / (0.04 + 0.08j)


@dataclass(frozen=True)
class Branch:
    """A line between two buses with complex series admittance (p.u.)."""

    from_bus: int
    to_bus: int
    admittance: complex
    in_service: bool = True

    def __post_init__(self):
        if self.from_bus == self.to_bus:
            raise InputError(f"branch endpoints must differ, got {self.from_bus}-{self.to_bus}")
        if self.in_service and self.admittance == 0:
            raise InputError(f"in-service branch {self.pair} has zero admittance")

    @property
    def pair(self) -> tuple[int, int]:
        a, b = self.from_bus, self.to_bus
        return (a, b) if a < b else (b, a)


@dataclass(frozen=True)
class GridTopology:
    """Immutable grid description: bus count, branches, slack bus.

    Safe to share across threads and Monte Carlo replications.
    """

    bus_count: int
    branches: tuple[Branch, ...]
    slack: int = 1

    def __post_init__(self):
        if self.bus_count < 2:
            raise InputError(f"grid needs at least 2 buses, got {self.bus_count}")
        if not 1 <= self.slack <= self.bus_count:
            raise InputError(f"slack bus {self.slack} out of range 1..{self.bus_count}")
        object.__setattr__(self, "branches", tuple(self.branches))
        seen = set()
        for br in self.branches:
            if not (1 <= br.from_bus <= self.bus_count and 1 <= br.to_bus <= self.bus_count):
                raise InputError(f"branch {br.pair} references unknown bus")
            if br.pair in seen:
                raise InputError(
                    f"duplicate branch pair {br.pair}; merge parallel branches first"
                )
            seen.add(br.pair)

    def in_service(self) -> tuple[Branch, ...]:
        return tuple(br for br in self.branches if br.in_service)

    def branch_between(self, i: int, k: int) -> Branch | None:
        pair = (i, k) if i < k else (k, i)
        for br in self.branches:
            if br.pair == pair:
                return br
        return None

    def neighbors(self, bus: int) -> list[int]:
        out = []
        for br in self.in_service():
            if br.from_bus == bus:
                out.append(br.to_bus)
            elif br.to_bus == bus:
                out.append(br.from_bus)
        return sorted(out)

    def components(self) -> list[list[int]]:
        """Connected components of the in-service graph (1-based buses)."""
        adj = {b: set() for b in range(1, self.bus_count + 1)}
        for br in self.in_service():
            adj[br.from_bus].add(br.to_bus)
            adj[br.to_bus].add(br.from_bus)
        unseen = set(range(1, self.bus_count + 1))
        comps = []
        while unseen:
            stack = [min(unseen)]
            comp = set()
            while stack:
                b = stack.pop()
                if b in comp:
                    continue
                comp.add(b)
                stack.extend(adj[b] - comp)
            unseen -= comp
            comps.append(sorted(comp))
        return comps

    def is_connected(self) -> bool:
        return len(self.components()) == 1

    def non_slack(self) -> list[int]:
        return [b for b in range(1, self.bus_count + 1) if b != self.slack]


def merge_parallel(branches) -> tuple[Branch, ...]:
    """Merge parallel branches on the same bus pair by summing admittances."""
    merged: dict[tuple[int, int], Branch] = {}
    for br in branches:
        prev = merged.get(br.pair)
        if prev is None:
            merged[br.pair] = br
        else:
            merged[br.pair] = Branch(
                prev.from_bus,
                prev.to_bus,
                prev.admittance + br.admittance,
                prev.in_service or br.in_service,
            )
    return tuple(merged.values())


@dataclass(frozen=True)
class AdmittanceMatrix:
    """Bus admittance matrix with positive off-diagonal storage.

    `matrix[i,k]` (0-based) holds the branch admittance y_ik for i != k and the
    diagonal holds the sum of incident branch admittances; see SIGN_CONVENTION.
    """

    matrix: np.ndarray
    convention: str = SIGN_CONVENTION

    def __post_init__(self):
        self.matrix.setflags(write=False)

    @property
    def nodal(self) -> np.ndarray:
        """Conventional nodal Ybus: same diagonal, negated off-diagonals."""
        d = np.diag(np.diag(self.matrix))
        return 2 * d - self.matrix

    @classmethod
    def from_nodal(cls, nodal: np.ndarray) -> "AdmittanceMatrix":
        d = np.diag(np.diag(nodal))
        return cls(matrix=2 * d - np.asarray(nodal))

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


def build_admittance(topology: GridTopology) -> AdmittanceMatrix:
    """Assemble the bus admittance matrix from in-service branches."""
    m = topology.bus_count
    y = np.zeros((m, m), dtype=complex)
    for br in topology.in_service():
        i, k = br.from_bus - 1, br.to_bus - 1
        y[i, k] += br.admittance
        y[k, i] += br.admittance
        y[i, i] += br.admittance
        y[k, k] += br.admittance
    return AdmittanceMatrix(matrix=y)


def apply_outage(topology: GridTopology, branch_pairs) -> GridTopology:
    """Mark the named branches out of service; rejects unknown pairs."""
    wanted = {tuple(sorted(p)) for p in branch_pairs}
    known = {br.pair for br in topology.branches if br.in_service}
    missing = wanted - known
    if missing:
        raise InputError(f"no in-service branch for pair(s) {sorted(missing)}")
    new_branches = tuple(
        replace(br, in_service=False) if br.pair in wanted else br for br in topology.branches
    )
    return replace(topology, branches=new_branches)


def reduced_admittance(y: AdmittanceMatrix, slack: int) -> np.ndarray:
    """Nodal admittance matrix with the slack row/column removed.

    This is the operator of the linear injection model dI = Y_red * dV over
    non-slack buses. Raises DeadIslandError when some bus is unreachable from
    the slack (no voltage reference).
    """
    m = y.size
    reach = _reachable(y.matrix, slack - 1)
    dead = [b + 1 for b in range(m) if b not in reach]
    if dead:
        raise DeadIslandError(dead)
    keep = [b for b in range(m) if b != slack - 1]
    return y.nodal[np.ix_(keep, keep)]


def component_reduction(nodal: np.ndarray, component, reference: int) -> tuple[list[int], np.ndarray]:
    """Reduced nodal matrix of one component relative to its reference bus.

    `component` and `reference` are 1-based; returns the non-reference bus
    order alongside the reduced matrix.
    """
    if reference not in component:
        raise InputError(f"reference bus {reference} not in component {sorted(component)}")
    rows = [b - 1 for b in sorted(component) if b != reference]
    buses = [b + 1 for b in rows]
    return buses, nodal[np.ix_(rows, rows)]


def _reachable(matrix: np.ndarray, start: int) -> set[int]:
    adj = np.abs(matrix) > 0
    np.fill_diagonal(adj, False)
    seen = {start}
    stack = [start]
    while stack:
        b = stack.pop()
        for k in np.nonzero(adj[b])[0]:
            if k not in seen:
                seen.add(int(k))
                stack.append(int(k))
    return seen


# ---------------------------------------------------------------------------
# JSON interchange


def grid_to_json(topology: GridTopology) -> dict:
    return {
        "format": GRID_FORMAT,
        "buses": topology.bus_count,
        "slack": topology.slack,
        "branches": [
            {
                "from": br.from_bus,
                "to": br.to_bus,
                "g": br.admittance.real,
                "b": br.admittance.imag,
                "in_service": br.in_service,
            }
            for br in topology.branches
        ],
    }


def grid_from_json(doc: dict) -> GridTopology:
    if doc.get("format") != GRID_FORMAT:
        raise InputError(f"unsupported grid format {doc.get('format')!r}, want {GRID_FORMAT!r}")
    try:
        branches = tuple(
            Branch(
                int(b["from"]),
                int(b["to"]),
                complex(float(b["g"]), float(b["b"])),
                bool(b.get("in_service", True)),
            )
            for b in doc["branches"]
        )
        return GridTopology(int(doc["buses"]), branches, int(doc.get("slack", 1)))
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed grid JSON: {exc}") from exc


def load_grid(path) -> GridTopology:
    with open(path, "r", encoding="utf-8") as fh:
        return grid_from_json(json.load(fh))


def save_grid(topology: GridTopology, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(grid_to_json(topology), fh, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Test-grid catalog
#
# The catalog uses one uniform branch admittance per grid. The 8-bus grids are
# a main feeder 1-2-3-4-5-6-7-8; the loopy variant adds chords 2-4 and 2-6
# with the same admittance as branch 7-8.


def chain_grid(n_buses: int, admittance: complex = CATALOG_ADMITTANCE) -> GridTopology:
    branches = tuple(Branch(i, i + 1, admittance) for i in range(1, n_buses))
    return GridTopology(n_buses, branches)


def eight_bus_radial(admittance: complex = CATALOG_ADMITTANCE) -> GridTopology:
    return chain_grid(8, admittance)


def eight_bus_loop(admittance: complex = CATALOG_ADMITTANCE) -> GridTopology:
    branches = tuple(Branch(i, i + 1, admittance) for i in range(1, 8))
    branches += (Branch(2, 4, admittance), Branch(2, 6, admittance))
    return GridTopology(8, branches)


def random_radial(n_buses: int, seed: int, admittance: complex = CATALOG_ADMITTANCE) -> GridTopology:
    """Random tree: each bus attaches to a uniformly chosen earlier bus."""
    rng = np.random.default_rng(seed)
    branches = tuple(
        Branch(int(rng.integers(1, b)), b, admittance) for b in range(2, n_buses + 1)
    )
    return GridTopology(n_buses, branches)


def random_mesh(
    n_buses: int, extra_branches: int, seed: int, admittance: complex = CATALOG_ADMITTANCE
) -> GridTopology:
    """Random tree plus chords, all with the same admittance."""
    rng = np.random.default_rng(seed)
    branches = [Branch(int(rng.integers(1, b)), b, admittance) for b in range(2, n_buses + 1)]
    pairs = {br.pair for br in branches}
    added = 0
    while added < extra_branches:
        a, b = sorted(rng.integers(1, n_buses + 1, size=2))
        if a == b or (int(a), int(b)) in pairs:
            continue
        pairs.add((int(a), int(b)))
        branches.append(Branch(int(a), int(b), admittance))
        added += 1
    return GridTopology(n_buses, tuple(branches))


def catalog() -> dict[str, GridTopology]:
    """Named test grids, up to 50 buses."""
    return {
        "8bus_radial": eight_bus_radial(),
        "8bus_loop": eight_bus_loop(),
        "radial12": random_radial(12, seed=12),
        "mesh20": random_mesh(20, extra_branches=4, seed=20),
        "radial35": random_radial(35, seed=35),
        "mesh50": random_mesh(50, extra_branches=8, seed=50),
    }


def resolve_grid(name_or_path: str) -> GridTopology:
    """Look up a catalog grid by name, or load a grid JSON file."""
    grids = catalog()
    if name_or_path in grids:
        return grids[name_or_path]
    try:
        return load_grid(name_or_path)
    except OSError as exc:
        raise InputError(
            f"{name_or_path!r} is neither a catalog grid {sorted(grids)} nor a readable file"
        ) from exc
