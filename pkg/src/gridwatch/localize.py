"""Out-of-service branch identification from pre/post increment covariances.

For each bus pair the conditional covariance given all other buses is the
Schur complement of the pair block; its normalized off-diagonal (the partial
correlation) vanishes exactly when no in-service branch connects the pair.
Branches whose partial correlation collapses to zero after the outage are the
out-of-service candidates. No topology input is required.

Pair evaluations are independent; report assembly is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError, NumericError

EPS_CONN_DEFAULT = 0.1
EPS_ZERO_DEFAULT = 0.02
DEAD_VARIANCE_REL = 1e-12


@dataclass(frozen=True)
class ConditionalCovariance:
    """2x2 covariance of one bus pair given every other bus."""

    pair: tuple
    matrix: np.ndarray
    source: str = "true"
    dead: bool = False


def conditional_cov(sigma: np.ndarray, pair, source: str = "true") -> ConditionalCovariance:
    """Schur complement of the (i, j) block: S_II - S_IJ S_JJ^-1 S_JI.

    `pair` holds 0-based indices into `sigma`. Buses with (numerically) zero
    variance carry no information and are dropped from the conditioning set;
    a pair touching such a bus is returned with a dead flag.
    """
    sigma = np.asarray(sigma, dtype=float)
    d = sigma.shape[0]
    i, j = pair
    if not (0 <= i < d and 0 <= j < d and i != j):
        raise InputError(f"invalid pair {pair} for a {d}-dimensional covariance")
    dead = _dead_mask(sigma)
    idx_i = [i, j]
    if dead[i] or dead[j]:
        return ConditionalCovariance(
            pair=(i, j), matrix=sigma[np.ix_(idx_i, idx_i)], source=source, dead=True
        )
    idx_j = [k for k in range(d) if k not in (i, j) and not dead[k]]
    s_ii = sigma[np.ix_(idx_i, idx_i)]
    if not idx_j:
        return ConditionalCovariance(pair=(i, j), matrix=s_ii, source=source)
    s_ij = sigma[np.ix_(idx_i, idx_j)]
    s_jj = sigma[np.ix_(idx_j, idx_j)]
    try:
        solved = np.linalg.solve(s_jj, s_ij.T)
    except np.linalg.LinAlgError as exc:
        raise NumericError(
            "conditioning block is singular; regularize the covariance first"
        ) from exc
    return ConditionalCovariance(pair=(i, j), matrix=s_ii - s_ij @ solved, source=source)


def conditional_corr(cc: ConditionalCovariance) -> float:
    """Normalized off-diagonal of the conditional covariance, in [-1, 1].

    Defined as 0 for dead (zero-variance) pairs.
    """
    m = cc.matrix
    if cc.dead or m[0, 0] <= 0 or m[1, 1] <= 0:
        return 0.0
    return float(m[0, 1] / np.sqrt(m[0, 0] * m[1, 1]))


def partial_correlations(sigma: np.ndarray):
    """All-pairs conditional correlations via one precision-matrix inverse.

    Identical to the per-pair Schur route ((S^-1)_II)^-1 but O(d^3) total.
    Returns the correlation matrix (unit diagonal, zero rows for dead buses)
    and the dead-bus mask.
    """
    sigma = np.asarray(sigma, dtype=float)
    d = sigma.shape[0]
    dead = _dead_mask(sigma)
    corr = np.zeros((d, d))
    live = np.flatnonzero(~dead)
    if live.size:
        try:
            prec = np.linalg.inv(sigma[np.ix_(live, live)])
        except np.linalg.LinAlgError as exc:
            raise NumericError(
                "covariance is singular; regularize the estimate first"
            ) from exc
        scale = np.sqrt(np.diag(prec))
        sub = -prec / np.outer(scale, scale)
        np.fill_diagonal(sub, 1.0)
        corr[np.ix_(live, live)] = sub
    return corr, dead


def _dead_mask(sigma: np.ndarray) -> np.ndarray:
    var = np.diag(sigma)
    top = float(var.max(initial=0.0))
    if top <= 0.0:
        return np.ones(var.shape, dtype=bool)
    return var <= DEAD_VARIANCE_REL * top


@dataclass(frozen=True)
class LocalizationReport:
    """Per-pair correlation collapse summary and ranked outage candidates."""

    bus_ids: tuple
    abs_rho_pre: np.ndarray
    abs_rho_post: np.ndarray
    candidates: tuple
    ranking: tuple
    eps_conn: float
    eps_zero: float
    source: str
    sample_count: float | None
    dead_buses_pre: tuple
    dead_buses_post: tuple
    island_pairs: tuple

    def top_pairs(self, k: int) -> list:
        return [pair for pair, _ in self.ranking[:k]]

    def heatmap_rows(self):
        out = []
        ids = self.bus_ids
        for a in range(len(ids)):
            for b in range(a + 1, len(ids)):
                out.append((ids[a], ids[b],
                            float(self.abs_rho_pre[a, b]), float(self.abs_rho_post[a, b])))
        return out

    def to_json(self) -> dict:
        return {
            "bus_ids": list(self.bus_ids),
            "eps_conn": self.eps_conn,
            "eps_zero": self.eps_zero,
            "source": self.source,
            "sample_count": self.sample_count,
            "candidates": [list(p) for p in self.candidates],
            "ranking": [[int(p[0]), int(p[1]), float(drop)] for p, drop in self.ranking],
            "dead_buses_pre": list(self.dead_buses_pre),
            "dead_buses_post": list(self.dead_buses_post),
            "island_pairs": [list(p) for p in self.island_pairs],
        }


def localize(sigma_pre: np.ndarray, sigma_post: np.ndarray,
             eps_conn: float = EPS_CONN_DEFAULT, eps_zero: float = EPS_ZERO_DEFAULT,
             bus_ids=None, source: str = "true",
             sample_count: float | None = None) -> LocalizationReport:
    """Evaluate every bus pair and rank outage-branch candidates.

    Candidates are pairs whose pre-outage partial correlation exceeds
    `eps_conn` while the post-outage one falls below `eps_zero`, ordered by
    the size of the drop (ties broken lexicographically). Pairs that lost a
    bus to a dead island cannot be disambiguated and are surfaced separately.
    """
    sigma_pre = np.asarray(sigma_pre, dtype=float)
    sigma_post = np.asarray(sigma_post, dtype=float)
    if sigma_pre.shape != sigma_post.shape:
        raise InputError(
            f"covariance shapes differ: {sigma_pre.shape} vs {sigma_post.shape}"
        )
    d = sigma_pre.shape[0]
    if bus_ids is None:
        bus_ids = tuple(range(1, d + 1))
    bus_ids = tuple(bus_ids)
    if len(bus_ids) != d:
        raise InputError(f"need {d} bus ids, got {len(bus_ids)}")
    corr_pre, dead_pre = partial_correlations(sigma_pre)
    corr_post, dead_post = partial_correlations(sigma_post)

    scored = []
    island_pairs = []
    for a in range(d):
        for b in range(a + 1, d):
            pre = abs(float(corr_pre[a, b]))
            post = abs(float(corr_post[a, b]))
            pair = (bus_ids[a], bus_ids[b])
            newly_dead = (dead_post[a] and not dead_pre[a]) or (dead_post[b] and not dead_pre[b])
            if newly_dead:
                if pre > eps_conn:
                    island_pairs.append(pair)
                continue
            scored.append((pair, pre - post, pre, post))
    scored.sort(key=lambda row: (-row[1], row[0]))
    ranking = tuple((pair, drop) for pair, drop, _, _ in scored)
    candidates = tuple(
        pair for pair, _, pre, post in scored if pre > eps_conn and post < eps_zero
    )
    return LocalizationReport(
        bus_ids=bus_ids,
        abs_rho_pre=np.abs(corr_pre),
        abs_rho_post=np.abs(corr_post),
        candidates=candidates,
        ranking=ranking,
        eps_conn=eps_conn,
        eps_zero=eps_zero,
        source=source,
        sample_count=sample_count,
        dead_buses_pre=tuple(bus_ids[k] for k in np.flatnonzero(dead_pre)),
        dead_buses_post=tuple(bus_ids[k] for k in np.flatnonzero(dead_post)),
        island_pairs=tuple(island_pairs),
    )
