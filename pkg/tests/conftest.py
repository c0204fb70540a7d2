import math

import numpy as np
import pytest

from fairpanel.schema import Agent, Dataset, FeatureSchema, PopulationStats


@pytest.fixture
def two_feature_schema():
    return FeatureSchema(
        features=("gender", "age"),
        values_per_feature={"gender": ("male", "female"), "age": ("young", "old")},
    )


def make_pool(schema, vectors, prefix="a"):
    agents = tuple(
        Agent(id=f"{prefix}{i}", vector=tuple(v)) for i, v in enumerate(vectors)
    )
    return Dataset(schema=schema, agents=agents, kind="pool")


def random_pool(schema, n, rng, prefix="a"):
    vectors = []
    for _ in range(n):
        vec = tuple(
            schema.values_per_feature[f][rng.integers(len(schema.values_per_feature[f]))]
            for f in schema.features
        )
        vectors.append(vec)
    return make_pool(schema, vectors, prefix=prefix)


def random_schema(rng, max_features=3, max_values=4):
    nf = int(rng.integers(1, max_features + 1))
    features = tuple(f"f{j}" for j in range(nf))
    values = {
        f: tuple(f"v{j}" for j in range(int(rng.integers(2, max_values + 1))))
        for f in features
    }
    return FeatureSchema(features=features, values_per_feature=values)


def uniform_stats(schema, n):
    counts = {}
    for f in schema.features:
        vals = schema.values_per_feature[f]
        for v in vals:
            counts[(f, v)] = n / len(vals)
    return PopulationStats(n=n, counts=counts, schema=schema)


def stats_from_pool_shares(pool, n):
    """Population whose per-pair shares equal the pool's empirical shares."""
    schema = pool.schema
    counts = {pair: 0.0 for pair in schema.pairs}
    for agent in pool.agents:
        for f, v in zip(schema.features, agent.vector):
            counts[(f, v)] += n / len(pool)
    return PopulationStats(n=n, counts=counts, schema=schema)


def model_pool_instance(rng, max_pool=60, max_k=10, max_features=3, max_values=4,
                        alpha_range=(2.0, 8.0)):
    """Pool drawn from a random participation model, regenerated until the
    good-pool conditions hold, so the theorem quotas are feasible by
    construction. Returns (pool, pi, instance)."""
    import itertools

    from fairpanel.marginals import Instance, check_good_pool, compute_marginals

    while True:
        schema = random_schema(rng, max_features=max_features, max_values=max_values)
        archetypes = list(
            itertools.product(*(schema.values_per_feature[f] for f in schema.features))
        )
        shares = rng.dirichlet(np.full(len(archetypes), 2.0))
        beta0 = float(rng.uniform(0.1, 0.5))
        beta = {}
        for f in schema.features:
            vals = schema.values_per_feature[f]
            levels = np.concatenate([[1.0], rng.uniform(0.4, 1.0, len(vals) - 1)])
            for v, lvl in zip(vals, levels):
                beta[(f, v)] = float(lvl)
        q_arch = np.array([
            beta0 * np.prod([beta[(f, v)] for f, v in zip(schema.features, vec)])
            for vec in archetypes
        ])
        m = int(rng.integers(max(8, max_k + 3), max_pool + 1))
        k = int(rng.integers(2, max_k + 1))
        pool_dist = shares * q_arch
        pool_dist = pool_dist / pool_dist.sum()
        draws = rng.choice(len(archetypes), size=m, p=pool_dist)
        pool = make_pool(schema, [archetypes[d] for d in draws])
        q = q_arch[draws]
        q_star = float(q_arch.min())
        alpha = float(rng.uniform(*alpha_range))
        r = max(int(round(alpha * k / q_star)), k)
        n = 1_000_000
        counts = {}
        for pos, f in enumerate(schema.features):
            for v in schema.values_per_feature[f]:
                share = sum(s for s, vec in zip(shares, archetypes) if vec[pos] == v)
                counts[(f, v)] = share * n
        stats = PopulationStats(n=n, counts=counts, schema=schema)
        instance = Instance.build(stats, r=r, k=k, q_star=q_star)
        pi = compute_marginals(q, k)
        verdict = check_good_pool(pi, 1.0 / q, pool, instance)
        if verdict.good:
            return pool, pi, instance
