"""Phase I of panel selection: selection marginals, good-pool conditions,
and the quota set every produced panel must satisfy.

An agent in the pool is assigned marginal probability
``pi_i = k * (1/q_i) / sum_j (1/q_j)``: inverse-probability weighting makes
end-to-end selection probabilities near-uniform across the population. The
good-pool conditions bound how far a realized pool may drift before those
marginals stop being implementable; the quota set turns the same bands,
widened by the rounding slack of one seat per feature, into enforceable
integer seat ranges.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyPool, FairpanelError, InfeasibleCap
from .schema import Dataset, FeatureSchema, PopulationStats, pair_indicator_matrix

DEFAULT_EXPONENT = 0.49


def compute_alpha(q_star: float, r: int, k: int) -> float:
    """Instance hardness parameter: minimum participation probability times
    invitations per panel seat."""
    if not 0 < q_star <= 1:
        raise FairpanelError(f"q_star must be in (0, 1], got {q_star}")
    if r < 1 or k < 1:
        raise FairpanelError("r and k must be positive")
    return q_star * r / k


@dataclass(frozen=True)
class Instance:
    """Population statistics plus pipeline parameters (letters r, panel size k)."""

    stats: PopulationStats
    r: int
    k: int
    q_star: float
    alpha: float
    num_features: int

    @classmethod
    def build(cls, stats: PopulationStats, r: int, k: int, q_star: float) -> "Instance":
        if k > r:
            raise FairpanelError(f"panel size k={k} exceeds letters r={r}")
        return cls(
            stats=stats,
            r=r,
            k=k,
            q_star=q_star,
            alpha=compute_alpha(q_star, r, k),
            num_features=stats.schema.num_features,
        )

    @property
    def a_star(self) -> float:
        """Largest inverse participation probability, 1/q*."""
        return 1.0 / self.q_star


@dataclass(frozen=True)
class GoodPoolVerdict:
    """Outcome of the three good-pool checks, with slack margins.

    Margins are >= 0 exactly when the condition holds: margin1 is
    1 - max(pi); margin2 is the band width minus the worst relative
    drift of any pair's marginal mass; margin3 is the allowed minus the
    realized inverse-probability mass, relative to r. Degenerate
    thresholds (alpha <= 1) report -inf.
    """

    cond1_ok: bool
    cond2_ok: bool
    cond3_ok: bool
    cond2_worst_pair: Optional[tuple[str, str]]
    margin1: float
    margin2: float
    margin3: float

    @property
    def good(self) -> bool:
        return self.cond1_ok and self.cond2_ok and self.cond3_ok

    def good_under(self, policy: str) -> bool:
        """strict: all three conditions; relaxed: the total-mass bound
        (condition 3) is waived."""
        if policy == "strict":
            return self.good
        if policy == "relaxed":
            return self.cond1_ok and self.cond2_ok
        raise FairpanelError(f"unknown policy {policy!r}")

    def summary(self) -> str:
        flags = []
        for name, ok in (("marginals<=1", self.cond1_ok),
                         ("per-pair mass", self.cond2_ok),
                         ("total mass", self.cond3_ok)):
            flags.append(f"{name}: {'ok' if ok else 'FAIL'}")
        if self.cond2_worst_pair is not None:
            flags.append(f"worst pair: {self.cond2_worst_pair}")
        return "; ".join(flags)


@dataclass(frozen=True)
class QuotaSet:
    """Integer seat interval per feature-value pair, for a panel of size k."""

    k: int
    bounds: dict[tuple[str, str], tuple[int, int]]

    def __post_init__(self):
        for pair, (lo, hi) in self.bounds.items():
            if not (0 <= lo <= hi <= self.k):
                raise FairpanelError(f"invalid quota interval {lo}..{hi} for {pair}")

    def lower(self, pair) -> int:
        return self.bounds[pair][0]

    def upper(self, pair) -> int:
        return self.bounds[pair][1]

    def satisfied_by_counts(self, counts: dict[tuple[str, str], int]) -> bool:
        return all(
            lo <= counts.get(pair, 0) <= hi for pair, (lo, hi) in self.bounds.items()
        )


@dataclass(frozen=True)
class MarginalAssignment:
    pool_ids: tuple[str, ...]
    q: np.ndarray
    a: np.ndarray
    pi: np.ndarray
    good: GoodPoolVerdict


def compute_marginals(q: Sequence[float], k: int) -> np.ndarray:
    """pi_i = k * a_i / sum(a), with a_i = 1/q_i."""
    q = np.asarray(q, dtype=np.float64)
    if q.size == 0:
        raise EmptyPool("cannot assign marginals on an empty pool")
    if np.any(q <= 0) or np.any(q > 1):
        raise FairpanelError("participation probabilities must lie in (0, 1]")
    a = 1.0 / q
    return k * a / a.sum()


def quota_interval(alpha: float, k: int, share: float, num_features: int,
                   exponent: float = DEFAULT_EXPONENT) -> tuple[int, int]:
    """Theorem quota interval for one pair: proportional seats widened by
    the concentration band and one seat per feature, clamped to [0, k] and
    rounded outward."""
    band = 0.0 if math.isinf(alpha) else alpha ** (-exponent)
    expected = k * share
    raw_lo = (1.0 - band) * expected - num_features
    raw_hi = (1.0 + band) * expected + num_features
    lo = math.floor(min(max(raw_lo, 0.0), k))
    hi = math.ceil(min(max(raw_hi, 0.0), k))
    return lo, hi


def compute_quotas(instance: Instance, exponent: float = DEFAULT_EXPONENT) -> QuotaSet:
    bounds = {}
    for pair in instance.stats.schema.pairs:
        bounds[pair] = quota_interval(
            instance.alpha, instance.k, instance.stats.share(pair),
            instance.num_features, exponent,
        )
    return QuotaSet(k=instance.k, bounds=bounds)


def check_good_pool(
    pi: np.ndarray,
    a: np.ndarray,
    pool: Dataset,
    instance: Instance,
    exponent: float = DEFAULT_EXPONENT,
) -> GoodPoolVerdict:
    """Evaluate the three good-pool conditions for computed marginals."""
    pi = np.asarray(pi, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    k = instance.k
    margin1 = float(1.0 - pi.max())
    cond1 = bool(pi.max() <= 1.0)

    if instance.alpha <= 1.0:
        return GoodPoolVerdict(
            cond1_ok=cond1, cond2_ok=False, cond3_ok=False,
            cond2_worst_pair=None,
            margin1=margin1, margin2=-math.inf, margin3=-math.inf,
        )

    band = instance.alpha ** (-exponent)
    pair_matrix = pair_indicator_matrix(pool)
    pair_mass = pair_matrix @ pi

    worst_pair = None
    worst_rel = -math.inf
    for idx, pair in enumerate(pool.schema.pairs):
        target = k * instance.stats.share(pair)
        mass = pair_mass[idx]
        if target <= 0:
            rel = math.inf if mass > 0 else 0.0
        else:
            rel = abs(mass / target - 1.0)
        if rel > worst_rel:
            worst_rel = rel
            worst_pair = pair
    margin2 = float(band - worst_rel)
    cond2 = bool(worst_rel <= band)

    allowed = instance.r / (1.0 - band)
    margin3 = float((allowed - a.sum()) / instance.r)
    cond3 = bool(a.sum() <= allowed)

    return GoodPoolVerdict(
        cond1_ok=cond1, cond2_ok=cond2, cond3_ok=cond3,
        cond2_worst_pair=worst_pair,
        margin1=margin1, margin2=margin2, margin3=margin3,
    )


def assign_marginals(
    pool: Dataset,
    q: Sequence[float],
    instance: Instance,
    exponent: float = DEFAULT_EXPONENT,
) -> MarginalAssignment:
    """Compute marginals for every pool member and attach the good-pool verdict."""
    q = np.asarray(q, dtype=np.float64)
    if len(pool) != q.size:
        raise FairpanelError("one q value per pool member required")
    pi = compute_marginals(q, instance.k)
    a = 1.0 / q
    verdict = check_good_pool(pi, a, pool, instance, exponent)
    return MarginalAssignment(pool_ids=pool.ids, q=q, a=a, pi=pi, good=verdict)


def rescale_and_cap(pi: Sequence[float], k: int) -> np.ndarray:
    """Cap marginals at 1 and rescale the uncapped remainder so the total
    stays k. Practical fallback when some pi exceed 1; preserves the
    relative order of uncapped entries.
    """
    pi = np.asarray(pi, dtype=np.float64).copy()
    if abs(pi.sum() - k) > 1e-9 * max(1.0, k):
        raise FairpanelError(f"marginals sum to {pi.sum()}, expected {k}")
    if k > pi.size:
        raise InfeasibleCap(f"k={k} exceeds pool size {pi.size}")
    capped = np.zeros(pi.size, dtype=bool)
    while True:
        over = (pi > 1.0) & ~capped
        if not over.any():
            break
        capped |= over
        pi[capped] = 1.0
        budget = k - capped.sum()
        if budget < 0:
            raise InfeasibleCap("more than k marginals require capping")
        rest = ~capped
        rest_sum = pi[rest].sum()
        if rest_sum <= 0:
            if budget > 1e-12:
                raise InfeasibleCap("no uncapped mass left to absorb the remainder")
            break
        pi[rest] *= budget / rest_sum
    return pi
