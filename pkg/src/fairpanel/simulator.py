"""Synthetic populations and end-to-end pipeline simulation.

Populations are built by duplicating a weighted background sample (Hamilton
apportionment turns weights into copy counts) and are kept at archetype
granularity throughout: inviting r people uniformly without replacement is a
multivariate hypergeometric draw over archetype counts, and self-selection
is a binomial per archetype. That is distributionally identical to
per-individual simulation and feasible for populations of tens of millions.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .baseline import GreedyConfig, estimate_selection_probs, proportional_quotas
from .errors import FairpanelError, SchemaMismatch
from .learning import ParticipationModel, predict_q_dataset
from .marginals import DEFAULT_EXPONENT, Instance
from .numerics import RandomStream, split_stream
from .schema import (
    Agent,
    Dataset,
    FeatureSchema,
    PopulationStats,
    pair_indicator_matrix,
)


def hamilton_apportion(weights, total: int) -> np.ndarray:
    """Largest-remainder rounding of weight shares into integer counts.

    Each count is floor(quota) plus at most one; leftover seats go to the
    largest remainders, ties to the lower index.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if total < 0:
        raise FairpanelError("total must be nonnegative")
    if weights.size == 0 or np.any(weights < 0) or weights.sum() <= 0:
        raise FairpanelError("weights must be nonnegative and not all zero")
    quotas = weights * (total / weights.sum())
    counts = np.floor(quotas).astype(np.int64)
    remaining = total - int(counts.sum())
    if remaining > 0:
        remainders = quotas - counts
        order = np.lexsort((np.arange(weights.size), -remainders))
        counts[order[:remaining]] += 1
    return counts


@dataclass(frozen=True)
class SyntheticPopulation:
    """Archetypes (one per background agent) with copy counts and true q."""

    agents: tuple[Agent, ...]
    counts: np.ndarray
    q: np.ndarray
    n: int
    seed: int
    schema: FeatureSchema

    def __post_init__(self):
        if int(self.counts.sum()) != self.n:
            raise FairpanelError("archetype counts must sum to the population size")
        if np.any((self.q <= 0) | (self.q > 1)):
            raise FairpanelError("true participation probabilities must be in (0, 1]")

    @property
    def num_archetypes(self) -> int:
        return len(self.agents)

    def stats(self) -> PopulationStats:
        dataset = Dataset(schema=self.schema, agents=self.agents, kind="population")
        R = pair_indicator_matrix(dataset)
        totals = R @ self.counts.astype(np.float64)
        counts = {pair: float(totals[i]) for i, pair in enumerate(self.schema.pairs)}
        return PopulationStats(n=self.n, counts=counts, schema=self.schema)


def synthesize_population(
    background: Dataset, model: ParticipationModel, n: int, seed: int
) -> SyntheticPopulation:
    """Duplicate background agents in proportion to their weights; the
    model's predictions become the copies' true participation probabilities."""
    if n < len(background):
        raise FairpanelError("population size must be at least the background size")
    weights = np.array([a.weight for a in background.agents])
    counts = hamilton_apportion(weights, n)
    q = predict_q_dataset(model, background)
    return SyntheticPopulation(
        agents=background.agents,
        counts=counts,
        q=q,
        n=n,
        seed=seed,
        schema=background.schema,
    )


def _pool_counts(pop: SyntheticPopulation, r: int, gen) -> np.ndarray:
    """Archetype composition of one simulated pool."""
    recipients = gen.multivariate_hypergeometric(pop.counts, r)
    return gen.binomial(recipients, pop.q)


def simulate_pool(pop: SyntheticPopulation, r: int, rng: RandomStream) -> Dataset:
    """One invite-and-volunteer round, materialized as a pool dataset."""
    if r > pop.n:
        raise FairpanelError("cannot invite more people than the population holds")
    counts = _pool_counts(pop, r, rng.generator)
    return _materialize_pool(pop, counts)


def _materialize_pool(pop: SyntheticPopulation, counts: np.ndarray) -> Dataset:
    agents = []
    for a, c in enumerate(counts):
        vec = pop.agents[a].vector
        for t in range(int(c)):
            agents.append(Agent(id=f"a{a}#{t}", vector=vec))
    return Dataset(schema=pop.schema, agents=tuple(agents), kind="pool")


@dataclass
class EndToEndReport:
    """Per-archetype end-to-end probability estimates plus pool accounting."""

    algorithm: str
    policy: str
    r: int
    k: int
    pools: int
    q: np.ndarray
    estimates: np.ndarray
    copies: np.ndarray
    bad_by_condition: dict
    bad_pools: int
    greedy_failed_trials: int = 0

    def to_rows(self) -> list[dict]:
        return [
            {
                "archetype": i,
                "true_q": float(self.q[i]),
                "estimate": float(self.estimates[i]),
                "copies": int(self.copies[i]),
            }
            for i in range(self.q.size)
        ]

    def write_csv(self, path) -> None:
        rows = self.to_rows()
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "policy": self.policy,
            "r": self.r,
            "k": self.k,
            "pools": self.pools,
            "bad_pools": self.bad_pools,
            "bad_by_condition": {k: int(v) for k, v in self.bad_by_condition.items()},
            "greedy_failed_trials": self.greedy_failed_trials,
            "archetypes": self.to_rows(),
        }

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)


def estimate_end_to_end(
    pop: SyntheticPopulation,
    r: int,
    k: int,
    pools: int,
    policy: str = "strict",
    algorithm: str = "ours",
    rng: Optional[RandomStream] = None,
    exponent: float = DEFAULT_EXPONENT,
    trials_per_pool: int = 10,
) -> EndToEndReport:
    """Monte-Carlo estimate of each archetype's probability of reaching the
    panel, over `pools` simulated pools.

    `ours` credits the inverse-probability marginals on pools that are good
    under the policy and zero otherwise; `greedy` averages realized greedy
    selections under floor/ceiling proportional quotas; `uniform` credits
    k/|pool| to every pool member. Pool index p draws from
    split_stream(rng.seed, rng.stream_index + 1 + p), so any parallel
    partition of the pool range reproduces the sequential result.
    """
    if algorithm not in ("ours", "greedy", "uniform"):
        raise FairpanelError(f"unknown algorithm {algorithm!r}")
    if rng is None:
        rng = RandomStream(pop.seed, 0)
    stats = pop.stats()
    q_star = float(pop.q.min())
    instance = Instance.build(stats, r=r, k=k, q_star=q_star)
    band = instance.alpha ** (-exponent) if instance.alpha > 1 else np.inf

    dataset = Dataset(schema=pop.schema, agents=pop.agents, kind="population")
    H = pair_indicator_matrix(dataset)  # pairs x archetypes
    pair_targets = np.array([k * stats.share(p) for p in pop.schema.pairs])
    a_vec = 1.0 / pop.q

    sums = np.zeros(pop.num_archetypes)
    bad = {"cond1": 0, "cond2": 0, "cond3": 0, "too_small": 0}
    bad_pools = 0
    greedy_failed = 0
    greedy_cfg = None
    if algorithm == "greedy":
        greedy_cfg = GreedyConfig(
            quotas=proportional_quotas(stats, k), trials_per_pool=trials_per_pool
        )

    for p in range(pools):
        stream = split_stream(rng.seed, rng.stream_index + 1 + p)
        counts = _pool_counts(pop, r, stream.generator)
        pool_size = int(counts.sum())

        if algorithm == "uniform":
            if pool_size > 0:
                sums += counts * (k / pool_size)
            continue

        if algorithm == "greedy":
            if pool_size < k:
                greedy_failed += trials_per_pool
                continue
            pool_ds = _materialize_pool(pop, counts)
            freqs = estimate_selection_probs(pool_ds, greedy_cfg, stream)
            greedy_failed += freqs.failures
            if freqs.successes:
                boundaries = np.concatenate([[0], np.cumsum(counts)])
                for a in range(pop.num_archetypes):
                    sums[a] += float(
                        freqs.frequencies[boundaries[a]:boundaries[a + 1]].sum()
                    )
            continue

        # ours
        if pool_size < k or pool_size == 0:
            bad["too_small"] += 1
            bad_pools += 1
            continue
        mass = counts * a_vec
        total_a = float(mass.sum())
        pi = k * a_vec / total_a
        present = counts > 0
        cond1 = bool(pi[present].max() <= 1.0)
        pair_mass = H @ (mass * (k / total_a))
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.abs(np.where(pair_targets > 0, pair_mass / pair_targets - 1.0,
                                  np.where(pair_mass > 0, np.inf, 0.0)))
        cond2 = bool(np.isfinite(band) and rel.max() <= band)
        cond3 = bool(np.isfinite(band) and total_a <= r / (1.0 - band))
        if not cond1:
            bad["cond1"] += 1
        if not cond2:
            bad["cond2"] += 1
        if not cond3:
            bad["cond3"] += 1
        good = (cond1 and cond2) if policy == "relaxed" else (cond1 and cond2 and cond3)
        if good:
            sums += counts * pi
        else:
            bad_pools += 1

    estimates = sums / (pop.counts * pools)
    return EndToEndReport(
        algorithm=algorithm,
        policy=policy,
        r=r,
        k=k,
        pools=pools,
        q=pop.q.copy(),
        estimates=estimates,
        copies=pop.counts.copy(),
        bad_by_condition=bad,
        bad_pools=bad_pools,
        greedy_failed_trials=greedy_failed,
    )


# ---------------------------------------------------------------------------
# model diagnostics
# ---------------------------------------------------------------------------

def hypothetical_pool(background: Dataset, model: ParticipationModel) -> dict:
    """Expected pool composition if the weighted background were invited:
    per pair, sum of w_i * q_i over carriers."""
    if background.schema != model.schema:
        raise SchemaMismatch("background does not match the model schema")
    q = predict_q_dataset(model, background)
    out = {pair: 0.0 for pair in background.schema.pairs}
    for agent, qi in zip(background.agents, q):
        for f, v in zip(background.schema.features, agent.vector):
            out[(f, v)] += agent.weight * qi
    return out


def pairwise_intersection_table(
    pool: Dataset, background: Dataset, model: ParticipationModel
) -> list[tuple]:
    """Observed vs hypothetical prevalence of every two-feature intersection.

    One row per unordered pair of feature-value pairs from distinct
    features: ((f, v), (g, w), pool fraction, hypothetical fraction).
    Fractions within one feature-feature block sum to 1 in each column.
    """
    if pool.schema != background.schema:
        raise SchemaMismatch("pool and background use different schemas")
    schema = pool.schema
    q = predict_q_dataset(model, background)
    bg_weight = np.array([a.weight for a in background.agents])
    hypo_mass = bg_weight * q
    hypo_total = float(hypo_mass.sum())
    feat_pos = {f: i for i, f in enumerate(schema.features)}

    rows = []
    for i, f in enumerate(schema.features):
        for g in schema.features[i + 1:]:
            for v in schema.values_per_feature[f]:
                for w in schema.values_per_feature[g]:
                    pool_hits = sum(
                        1 for a in pool.agents
                        if a.vector[feat_pos[f]] == v and a.vector[feat_pos[g]] == w
                    )
                    hypo_hits = float(sum(
                        m for a, m in zip(background.agents, hypo_mass)
                        if a.vector[feat_pos[f]] == v and a.vector[feat_pos[g]] == w
                    ))
                    rows.append((
                        (f, v),
                        (g, w),
                        pool_hits / len(pool) if len(pool) else 0.0,
                        hypo_hits / hypo_total if hypo_total else 0.0,
                    ))
    return rows


def q_histogram(
    dataset: Dataset,
    model: ParticipationModel,
    num_bins: int = 20,
    min_count: int = 7,
) -> list[dict]:
    """Histogram of predicted q with small-cell suppression: bins holding
    fewer than min_count individuals report no mass, only the flag."""
    q = predict_q_dataset(model, dataset)
    weights = np.array([a.weight for a in dataset.agents])
    edges = np.linspace(0.0, max(q.max(), 1e-9), num_bins + 1)
    which = np.clip(np.digitize(q, edges) - 1, 0, num_bins - 1)
    rows = []
    for b in range(num_bins):
        mask = which == b
        count = int(mask.sum())
        suppressed = 0 < count < min_count
        rows.append({
            "bin_low": float(edges[b]),
            "bin_high": float(edges[b + 1]),
            "count": 0 if suppressed else count,
            "weight": 0.0 if suppressed else float(weights[mask].sum()),
            "q_mass": 0.0 if suppressed else float((weights[mask] * q[mask]).sum()),
            "suppressed": suppressed,
        })
    return rows
