"""Quota-filling greedy panel selection, the practitioner baseline.

This is a reimplementation of the restart-based quota-greedy family used in
practice, not a byte-level replication of any specific tool: each seat goes
to the feature-value pair with the largest remaining lower-quota deficit
relative to its remaining eligible members (uniformly random within the
pair), falling back to a uniform choice among all eligible members once no
deficits remain. Dead ends trigger a restart.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import FairpanelError, QuotaInfeasible, RestartLimit
from .marginals import QuotaSet
from .numerics import RandomStream
from .rounding import Panel
from .schema import Dataset, PopulationStats


@dataclass(frozen=True)
class GreedyConfig:
    quotas: QuotaSet
    max_restarts: int = 100
    trials_per_pool: int = 10

    def __post_init__(self):
        if self.max_restarts < 1 or self.trials_per_pool < 1:
            raise FairpanelError("max_restarts and trials_per_pool must be >= 1")


@dataclass(frozen=True)
class SelectionFrequencies:
    """Per-agent selection frequencies over the successful greedy trials."""

    ids: tuple[str, ...]
    frequencies: np.ndarray
    successes: int
    failures: int


def proportional_quotas(stats: PopulationStats, k: int) -> QuotaSet:
    """Floor/ceiling of each pair's proportional seat share (the common way
    practitioners set quotas)."""
    bounds = {}
    for pair in stats.schema.pairs:
        share = k * stats.share(pair)
        bounds[pair] = (math.floor(share), min(math.ceil(share), k))
    return QuotaSet(k=k, bounds=bounds)


class _ArchetypeView:
    """Pool members grouped by feature vector; all greedy state is counts."""

    def __init__(self, pool: Dataset):
        self.schema = pool.schema
        index = self.schema.pair_index()
        order: dict[tuple, int] = {}
        members: list[list[str]] = []
        for agent in pool.agents:
            a = order.setdefault(agent.vector, len(order))
            if a == len(members):
                members.append([])
            members[a].append(agent.id)
        self.members = members
        self.counts = np.array([len(m) for m in members], dtype=np.int64)
        n_arch = len(members)
        n_pairs = len(self.schema.pairs)
        self.pair_idx = np.empty((n_arch, self.schema.num_features), dtype=np.int64)
        self.has_pair = np.zeros((n_pairs, n_arch), dtype=bool)
        for a, vec in enumerate(order):
            for j, (f, v) in enumerate(zip(self.schema.features, vec)):
                p = index[(f, v)]
                self.pair_idx[a, j] = p
                self.has_pair[p, a] = True


def _attempt(view: _ArchetypeView, lower, upper, k: int, gen) -> np.ndarray | None:
    """One greedy pass; returns per-archetype selected counts or None on a
    dead end."""
    n_arch = view.counts.size
    remaining = view.counts.astype(np.float64).copy()
    sel_arch = np.zeros(n_arch, dtype=np.int64)
    sel_pair = np.zeros(len(view.schema.pairs), dtype=np.int64)

    for _ in range(k):
        # an archetype is eligible while it has members left and adding one
        # would not push any of its pairs over the upper quota
        open_pairs = sel_pair < upper
        eligible = (remaining > 0) & np.all(open_pairs[view.pair_idx], axis=1)
        if not eligible.any():
            return None
        elig_remaining = np.where(eligible, remaining, 0.0)
        pair_avail = view.has_pair @ elig_remaining

        deficit = lower - sel_pair
        best_pair = -1
        best_ratio = 0.0
        for p in range(deficit.size):
            if deficit[p] <= 0:
                continue
            if pair_avail[p] < deficit[p]:
                return None
            ratio = deficit[p] / pair_avail[p]
            if ratio > best_ratio:
                best_ratio = ratio
                best_pair = p
        if best_pair >= 0:
            weights = np.where(view.has_pair[best_pair], elig_remaining, 0.0)
        else:
            weights = elig_remaining
        total = weights.sum()
        if total <= 0:
            return None
        a = int(gen.choice(n_arch, p=weights / total))
        sel_arch[a] += 1
        remaining[a] -= 1
        sel_pair[view.pair_idx[a]] += 1

    if np.any(sel_pair < lower):
        return None
    return sel_arch


def _quota_arrays(view: _ArchetypeView, quotas: QuotaSet):
    n_pairs = len(view.schema.pairs)
    lower = np.zeros(n_pairs, dtype=np.int64)
    upper = np.full(n_pairs, quotas.k, dtype=np.int64)
    for p, pair in enumerate(view.schema.pairs):
        if pair in quotas.bounds:
            lower[p], upper[p] = quotas.bounds[pair]
    return lower, upper


def _check_feasible_counts(view: _ArchetypeView, lower) -> None:
    pool_counts = view.has_pair @ view.counts
    for p, pair in enumerate(view.schema.pairs):
        if pool_counts[p] < lower[p]:
            raise QuotaInfeasible(pair, int(lower[p]), int(pool_counts[p]))


def _select_counts(view: _ArchetypeView, cfg: GreedyConfig, gen) -> np.ndarray:
    lower, upper = _quota_arrays(view, cfg.quotas)
    _check_feasible_counts(view, lower)
    for _ in range(cfg.max_restarts):
        sel = _attempt(view, lower, upper, cfg.quotas.k, gen)
        if sel is not None:
            return sel
    raise RestartLimit(f"no quota-satisfying panel within {cfg.max_restarts} restarts")


def greedy_select(pool: Dataset, cfg: GreedyConfig, rng: RandomStream) -> Panel:
    """Select one panel of size quotas.k satisfying cfg.quotas, or fail."""
    if len(pool) < cfg.quotas.k:
        raise QuotaInfeasible(("<pool>", "<size>"), cfg.quotas.k, len(pool))
    view = _ArchetypeView(pool)
    gen = rng.generator
    sel = _select_counts(view, cfg, gen)
    members = []
    for a, count in enumerate(sel):
        if count:
            chosen = gen.choice(len(view.members[a]), size=int(count), replace=False)
            members.extend(view.members[a][i] for i in np.sort(chosen))
    seat_counts = {pair: 0 for pair in view.schema.pairs}
    for a, count in enumerate(sel):
        for p in view.pair_idx[a]:
            seat_counts[view.schema.pairs[p]] += int(count)
    return Panel(members=frozenset(members), seat_counts=seat_counts)


def estimate_selection_probs(
    pool: Dataset, cfg: GreedyConfig, rng: RandomStream
) -> SelectionFrequencies:
    """Average per-agent selection indicator over trials_per_pool greedy runs."""
    view = _ArchetypeView(pool)
    gen = rng.generator
    lower, upper = _quota_arrays(view, cfg.quotas)
    arch_totals = np.zeros(view.counts.size, dtype=np.float64)
    successes = 0
    failures = 0
    try:
        _check_feasible_counts(view, lower)
    except QuotaInfeasible:
        failures = cfg.trials_per_pool
    else:
        for _ in range(cfg.trials_per_pool):
            sel = None
            for _ in range(cfg.max_restarts):
                sel = _attempt(view, lower, upper, cfg.quotas.k, gen)
                if sel is not None:
                    break
            if sel is None:
                failures += 1
            else:
                successes += 1
                arch_totals += sel

    freqs = np.zeros(len(pool))
    if successes:
        # members of an archetype are exchangeable, so each gets the
        # archetype's average share
        per_member = arch_totals / (view.counts * successes)
        pos = 0
        id_order = []
        for a, ids in enumerate(view.members):
            for aid in ids:
                id_order.append(aid)
        index = {aid: i for i, aid in enumerate(id_order)}
        flat = np.concatenate([np.full(len(ids), per_member[a]) for a, ids in enumerate(view.members)])
        freqs = np.array([flat[index[agent.id]] for agent in pool.agents])
    return SelectionFrequencies(
        ids=pool.ids, frequencies=freqs, successes=successes, failures=failures
    )
