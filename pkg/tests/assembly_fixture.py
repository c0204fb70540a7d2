"""Synthetic national-assembly-scale instance: 1715 pool members, panel of
110, six quota features with 25 feature-value pairs.

Built from a fixed participation model over a 60-million population whose
composition loosely mirrors a national survey; deterministic for a given
seed. The private real-world datasets are not shipped, so this fixture is
shaped like them without reproducing them.
"""

import numpy as np

from fairpanel.marginals import Instance, check_good_pool, compute_marginals, compute_quotas
from fairpanel.numerics import split_stream
from fairpanel.schema import Agent, Dataset, FeatureSchema, PopulationStats

FEATURES = {
    "sex": ("female", "male"),
    "age_band": ("16-29", "30-44", "45-59", "60plus"),
    "region": tuple(f"region_{i:02d}" for i in range(1, 13)),
    "education": ("level_low", "level_mid", "level_high"),
    "ethnicity": ("majority", "minority"),
    "area_type": ("urban", "rural"),
}

SHARES = {
    "sex": (0.51, 0.49),
    "age_band": (0.22, 0.25, 0.24, 0.29),
    "region": (0.040, 0.107, 0.082, 0.072, 0.089, 0.093,
               0.131, 0.137, 0.084, 0.047, 0.082, 0.036),
    "education": (0.25, 0.40, 0.35),
    "ethnicity": (0.86, 0.14),
    "area_type": (0.78, 0.22),
}

# Multiplicative participation effects; one value per feature is pinned at 1.
BETAS = {
    "sex": (0.82, 1.00),
    "age_band": (0.52, 0.74, 0.90, 1.00),
    "region": (0.80, 0.86, 0.72, 0.92, 0.78, 0.88,
               0.82, 0.96, 1.00, 0.76, 0.70, 0.66),
    "education": (0.45, 0.72, 1.00),
    "ethnicity": (0.92, 1.00),
    "area_type": (1.00, 0.84),
}

BASE_RATE = 0.08
POPULATION = 60_000_000
POOL_SIZE = 1715
PANEL_SIZE = 110
LETTERS = 60_000


def build_schema() -> FeatureSchema:
    return FeatureSchema(
        features=tuple(FEATURES), values_per_feature={f: v for f, v in FEATURES.items()}
    )


def build_assembly_instance(seed: int = 20_2020):
    """Returns (pool, q, pi, instance, quotas); the pool is good by
    construction for the fixture seed."""
    schema = build_schema()
    features = list(FEATURES)
    gen = split_stream(seed, 0).generator

    # Draw pool members feature-by-feature from the pool-conditional law:
    # independent features make P[v | in pool] proportional to share * beta.
    vectors = np.empty((POOL_SIZE, len(features)), dtype=np.int64)
    for j, f in enumerate(features):
        probs = np.asarray(SHARES[f]) * np.asarray(BETAS[f])
        probs = probs / probs.sum()
        vectors[:, j] = gen.choice(len(probs), size=POOL_SIZE, p=probs)

    agents = tuple(
        Agent(
            id=f"m{i:04d}",
            vector=tuple(FEATURES[f][vectors[i, j]] for j, f in enumerate(features)),
        )
        for i in range(POOL_SIZE)
    )
    pool = Dataset(schema=schema, agents=agents, kind="pool")

    beta_lookup = [np.asarray(BETAS[f]) for f in features]
    q = BASE_RATE * np.prod(
        np.column_stack([beta_lookup[j][vectors[:, j]] for j in range(len(features))]),
        axis=1,
    )

    counts = {}
    for f in features:
        for v, share in zip(FEATURES[f], SHARES[f]):
            counts[(f, v)] = share * POPULATION
    stats = PopulationStats(n=POPULATION, counts=counts, schema=schema)

    q_star = float(q.min())
    instance = Instance.build(stats, r=LETTERS, k=PANEL_SIZE, q_star=q_star)
    pi = compute_marginals(q, PANEL_SIZE)
    verdict = check_good_pool(pi, 1.0 / q, pool, instance)
    quotas = compute_quotas(instance)
    return pool, q, pi, instance, quotas, verdict
