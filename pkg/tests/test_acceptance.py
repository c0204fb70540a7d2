"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line (run with -s or check captured output).

The full suite includes a national-assembly-scale column generation run
(criterion 4); expect the whole module to take tens of minutes. Deselect
the heavy checks with `-m "not slow"` during development.
"""

import itertools
import math
import time

import numpy as np
import pytest
import scipy.stats

from assembly_fixture import build_assembly_instance
from conftest import make_pool, model_pool_instance, random_pool, random_schema
from fairpanel.learning import (
    ParticipationModel,
    build_design,
    fit_mle,
    log_likelihood,
    log_likelihood_gradient,
    mean_predicted_q,
)
from fairpanel.marginals import compute_marginals, compute_quotas
from fairpanel.numerics import RandomStream, split_stream
from fairpanel.rounding import (
    beck_fiala_round,
    build_panel_distribution,
    sample_panel,
)
from fairpanel.schema import Agent, Dataset, FeatureSchema, pair_indicator_matrix
from fairpanel.simulator import (
    estimate_end_to_end,
    hamilton_apportion,
    synthesize_population,
)


def report(num, name, detail=""):
    print(f"\n[PASS] criterion {num}: {name}" + (f" ({detail})" if detail else ""))


# -- 1: marginal exactness ----------------------------------------------------

def test_criterion_1_marginal_exactness():
    rng = np.random.default_rng(1001)
    for _ in range(50):
        n = int(rng.integers(1, 500))
        k = int(rng.integers(1, n + 1))
        q_val = float(rng.uniform(0.01, 1.0))
        pi = compute_marginals(np.full(n, q_val), k)
        assert np.max(np.abs(pi - k / n)) <= 1e-12
    for _ in range(50):
        n = int(rng.integers(2, 300))
        k = int(rng.integers(1, n + 1))
        q = rng.uniform(0.05, 1.0, n)
        c = float(rng.uniform(0.01, 1.0))
        assert np.max(np.abs(compute_marginals(q, k) - compute_marginals(c * q, k))) <= 1e-12
    report(1, "marginal exactness and scale invariance")


# -- 2: rounding invariants ---------------------------------------------------

def test_criterion_2_beck_fiala_suite():
    rng = np.random.default_rng(1002)
    start = time.time()
    for trial in range(1000):
        schema = random_schema(rng, max_features=5, max_values=5)
        n = int(rng.integers(schema.num_features + 5, 201))
        k = int(rng.integers(1, min(n - 1, 30) + 1))
        pool = random_pool(schema, n, rng)
        while True:
            raw = rng.uniform(0.05, 1.0, n)
            pi = k * raw / raw.sum()
            if pi.max() <= 1.0:
                break
        use_c = trial % 2 == 1
        c = rng.normal(size=n) if use_c else None
        x = beck_fiala_round(pi, pool, c=c)
        assert set(np.unique(x)).issubset({0, 1})
        assert int(x.sum()) == k
        R = pair_indicator_matrix(pool)
        assert np.max(np.abs(R @ x - R @ pi)) <= schema.num_features
        if use_c:
            assert float(c @ x) >= float(c @ pi) - 1e-7 * np.abs(c).max() * k
    elapsed = time.time() - start
    assert elapsed < 60, f"rounding suite took {elapsed:.1f}s"
    report(2, "1000-instance rounding invariant suite", f"{elapsed:.1f}s")


# -- 3: column generation at desk scale ----------------------------------------

def brute_force_marginal_gap(pi, n, k):
    from scipy.optimize import linprog

    panels = list(itertools.combinations(range(n), k))
    t = len(panels)
    A_ub = np.zeros((2 * n, 1 + t))
    b_ub = np.concatenate([-np.asarray(pi), np.asarray(pi)])
    for j, panel in enumerate(panels):
        for i in panel:
            A_ub[i, 1 + j] = -1.0
            A_ub[n + i, 1 + j] = 1.0
    A_ub[:, 0] = -1.0
    A_eq = np.zeros((1, 1 + t))
    A_eq[0, 1:] = 1.0
    res = linprog(np.eye(1 + t)[0], A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[1.0],
                  bounds=[(0, None)] * (1 + t), method="highs")
    assert res.status == 0
    return float(res.fun)


@pytest.mark.slow
def test_criterion_3_column_generation_desk_scale():
    rng = np.random.default_rng(1003)
    start = time.time()
    cross_checked = 0
    for trial in range(100):
        small = trial % 10 == 0
        pool, pi, instance = model_pool_instance(
            rng, max_pool=8 if small else 60, max_k=4 if small else 10
        )
        quotas = compute_quotas(instance)
        dist = build_panel_distribution(pi, pool, quotas, epsilon=1e-6)
        assert dist.max_marginal_error <= 1e-6
        assert np.max(np.abs(dist.implied_marginals() - pi)) <= 1e-6
        R = pair_indicator_matrix(pool)
        ids = np.array(pool.ids)
        for members in dist.panels:
            x = np.isin(ids, members).astype(float)
            counts = R @ x
            for idx, pair in enumerate(pool.schema.pairs):
                lo, hi = quotas.bounds[pair]
                assert lo <= counts[idx] <= hi
        if len(pool) <= 8:
            oracle = brute_force_marginal_gap(pi, len(pool), instance.k)
            assert abs(dist.max_marginal_error - oracle) <= 1e-6
            cross_checked += 1
    elapsed = time.time() - start
    assert elapsed < 600, f"desk-scale column generation took {elapsed:.1f}s"
    assert cross_checked >= 5
    report(3, "100-instance desk-scale column generation",
           f"{elapsed:.1f}s, {cross_checked} brute-force cross-checks")


# -- 4 (and 8 at scale): assembly-shaped rounding feasibility -------------------

@pytest.mark.slow
def test_criterion_4_assembly_scale_rounding():
    pool, q, pi, instance, quotas, verdict = build_assembly_instance()
    assert len(pool) == 1715 and instance.k == 110
    assert pool.schema.num_features == 6
    assert len(pool.schema.pairs) == 25
    assert verdict.good

    start = time.time()
    dist = build_panel_distribution(pi, pool, quotas, epsilon=1e-6)
    elapsed = time.time() - start
    assert elapsed < 7200, f"column generation took {elapsed:.0f}s"
    assert dist.max_marginal_error <= 1e-6

    R = pair_indicator_matrix(pool)
    targets = R @ pi
    kshare = np.array([instance.k * instance.stats.share(p) for p in pool.schema.pairs])
    ids = np.array(pool.ids)
    max_dev = 0.0
    max_prop_dev = 0.0
    for members in dist.panels:
        x = np.isin(ids, members).astype(float)
        counts = R @ x
        assert int(x.sum()) == instance.k
        dev = float(np.max(np.abs(counts - targets)))
        assert dev <= pool.schema.num_features  # +-|F| = 6
        max_dev = max(max_dev, dev)
        max_prop_dev = max(max_prop_dev, float(np.max(np.abs(counts - kshare))))
        # criterion 8: theorem quota recount, zero tolerance
        for idx, pair in enumerate(pool.schema.pairs):
            lo, hi = quotas.bounds[pair]
            assert lo <= counts[idx] <= hi
    report(4, "assembly-scale column generation",
           f"{elapsed:.0f}s, {len(dist.panels)} panels, "
           f"observed max |seats-expected| = {max_dev:.2f} (bound 6), "
           f"max |seats-proportional| = {max_prop_dev:.2f} (paper observed ~5)")


# -- 5: sampling fidelity --------------------------------------------------------

def test_criterion_5_sampling_fidelity():
    rng = np.random.default_rng(1005)
    schema = random_schema(rng, max_features=2, max_values=3)
    pool = random_pool(schema, 14, rng)
    while True:
        raw = rng.uniform(0.05, 1.0, 14)
        pi = 4 * raw / raw.sum()
        if pi.max() <= 1.0:
            break
    from fairpanel.marginals import QuotaSet

    dist = build_panel_distribution(
        pi, pool, QuotaSet(k=4, bounds={p: (0, 4) for p in schema.pairs})
    )
    draws = 100_000
    stream = split_stream(1005, 0)
    panel_hits = np.zeros(len(dist.panels))
    agent_hits = {aid: 0 for aid in pool.ids}
    panel_index = {members: i for i, members in enumerate(dist.panels)}
    for _ in range(draws):
        panel = sample_panel(dist, stream)
        panel_hits[panel_index[tuple(sorted(panel.members))]] += 1
        for aid in panel.members:
            agent_hits[aid] += 1
    panel_freq = panel_hits / draws
    assert np.max(np.abs(panel_freq - dist.weights)) <= 0.01
    agent_freq = np.array([agent_hits[aid] / draws for aid in pool.ids])
    assert np.max(np.abs(agent_freq - pi)) <= 0.01
    report(5, "sampling fidelity over 1e5 draws",
           f"{len(dist.panels)} panels, max panel gap "
           f"{np.max(np.abs(panel_freq - dist.weights)):.4f}")


# -- 6: likelihood estimation suite -----------------------------------------------

def test_criterion_6_mle_suite():
    schema = FeatureSchema(
        features=("first", "second"),
        values_per_feature={"first": ("a", "b"), "second": ("x", "y")},
    )
    rng = np.random.default_rng(1006)

    # (c) generative recovery from 1e5 agents; per-feature top coefficient
    # pinned at 1 so the shared-scale freedom is fixed
    beta0 = 0.1
    beta = {("first", "a"): 1.0, ("first", "b"): 0.62,
            ("second", "x"): 1.0, ("second", "y"): 0.55}
    n = 100_000
    vals = [("a", "b"), ("x", "y")]
    draws = rng.integers(0, 2, size=(n, 2))
    vectors = [(vals[0][i], vals[1][j]) for i, j in draws]
    q_true = np.array([beta0 * beta[("first", v0)] * beta[("second", v1)]
                       for v0, v1 in vectors])
    joined = rng.random(n) < q_true
    pool = make_pool(schema, [v for v, flag in zip(vectors, joined) if flag], prefix="p")
    bg_idx = rng.choice(n, 20_000, replace=False)
    background = Dataset(
        schema=schema,
        agents=tuple(Agent(id=f"b{i}", vector=vectors[j]) for i, j in enumerate(bg_idx)),
        kind="background",
    )
    qbar = float(joined.mean())
    rows = build_design(pool, background)
    nB, nP = len(background), len(pool)

    # (a) analytic vs central finite differences on 50 random points
    h = 1e-5
    for _ in range(50):
        theta = -rng.uniform(0.01, 2.5, 5)
        grad = log_likelihood_gradient(theta, rows, qbar, nB, nP)
        for jdim in range(5):
            e = np.zeros(5)
            e[jdim] = h
            fd = (log_likelihood(theta + e, rows, qbar, nB, nP)
                  - log_likelihood(theta - e, rows, qbar, nB, nP)) / (2 * h)
            assert grad[jdim] == pytest.approx(fd, rel=1e-5, abs=1e-6 * max(1, abs(fd)))

    # (b) midpoint concavity on 100 random pairs
    for _ in range(100):
        t1 = -rng.uniform(0.01, 3.0, 5)
        t2 = -rng.uniform(0.01, 3.0, 5)
        mid = log_likelihood((t1 + t2) / 2, rows, qbar, nB, nP)
        ends = (log_likelihood(t1, rows, qbar, nB, nP)
                + log_likelihood(t2, rows, qbar, nB, nP)) / 2
        assert mid >= ends - 1e-9

    model = fit_mle(rows, qbar, nB, nP, schema=schema, step=1e-4, iters=5000)
    fitted = {(f, v): b for f, v, b in model.beta_table()[1:]}
    b0_hat = math.exp(model.theta[0])
    assert b0_hat == pytest.approx(beta0, abs=0.03)
    for pair, truth in beta.items():
        assert fitted[pair] == pytest.approx(truth, abs=0.03)

    # (d) calibration: weighted mean of q-hat over the background vs qbar
    gap_pp = 100 * abs(mean_predicted_q(model, background) - qbar)
    assert gap_pp <= 0.2
    report(6, "MLE suite (gradient, concavity, recovery, calibration)",
           f"beta0 {b0_hat:.4f} vs {beta0}, calibration gap {gap_pp:.4f}pp")


# -- 7: end-to-end fairness at desk scale -------------------------------------------

@pytest.mark.slow
def test_criterion_7_end_to_end_fairness():
    schema = FeatureSchema(
        features=("first", "second"),
        values_per_feature={"first": ("a", "b"), "second": ("x", "y")},
    )
    weights = (0.35, 0.15, 0.15, 0.35)
    vecs = [("a", "x"), ("a", "y"), ("b", "x"), ("b", "y")]
    background = Dataset(
        schema=schema,
        agents=tuple(Agent(id=f"b{i}", vector=v, weight=w)
                     for i, (v, w) in enumerate(zip(vecs, weights))),
        kind="background",
    )
    theta = np.array([math.log(0.08), 0.0, math.log(0.35), 0.0, math.log(0.30)])
    model = ParticipationModel(theta=theta, schema=schema, qbar=0.03)
    n, k, pools = 100_000, 10, 10_000
    pop = synthesize_population(background, model, n, seed=1007)
    assert pop.q.max() / pop.q.min() >= 4.0
    r = int(round(4.0 * k / pop.q.min()))
    kn = k / n
    start = time.time()

    ours = estimate_end_to_end(pop, r=r, k=k, pools=pools, policy="relaxed",
                               algorithm="ours", rng=RandomStream(7, 0))
    assert np.max(np.abs(ours.estimates - kn)) <= 0.15 * kn

    greedy = estimate_end_to_end(pop, r=r, k=k, pools=pools, policy="relaxed",
                                 algorithm="greedy", rng=RandomStream(7, 0))
    greedy_ratio = float(greedy.estimates.max() / greedy.estimates.min())
    assert greedy_ratio >= 1.5

    uniform = estimate_end_to_end(pop, r=r, k=k, pools=pools, policy="relaxed",
                                  algorithm="uniform", rng=RandomStream(7, 0))
    rho = scipy.stats.spearmanr(pop.q, uniform.estimates).statistic
    assert rho > 0.9
    elapsed = time.time() - start
    assert elapsed < 1800, f"end-to-end suite took {elapsed:.0f}s"
    report(7, "end-to-end fairness at desk scale",
           f"{elapsed:.0f}s; ours within {np.max(np.abs(ours.estimates - kn))/kn:.3f} "
           f"of k/n, greedy ratio {greedy_ratio:.2f}, uniform Spearman {rho:.3f}")


# -- 8: quota conformance on emitted panels ------------------------------------------

def test_criterion_8_quota_conformance():
    """Every panel emitted by the pipeline satisfies the theorem quota set of
    its instance (sampled panels recounted with zero tolerance). The
    assembly-scale and desk-scale support panels are recounted in criteria
    3 and 4; this adds the sampled-panel surface."""
    rng = np.random.default_rng(1008)
    for trial in range(10):
        pool, pi, instance = model_pool_instance(rng, max_pool=40, max_k=8)
        quotas = compute_quotas(instance)
        dist = build_panel_distribution(pi, pool, quotas)
        stream = split_stream(1008, trial)
        for _ in range(20):
            panel = sample_panel(dist, stream)
            assert len(panel.members) == instance.k
            for pair in pool.schema.pairs:
                lo, hi = quotas.bounds[pair]
                assert lo <= panel.seat_counts.get(pair, 0) <= hi
    report(8, "theorem quota recount on sampled panels")


# -- 9: apportionment and pipeline identities ------------------------------------------

def test_criterion_9_apportionment_and_pool_identities():
    rng = np.random.default_rng(1009)
    for _ in range(500):
        size = int(rng.integers(1, 50))
        weights = rng.uniform(0.01, 5.0, size)
        total = int(rng.integers(0, 3000))
        counts = hamilton_apportion(weights, total)
        assert int(counts.sum()) == total
        quotas = weights * total / weights.sum()
        assert np.all(np.abs(counts - quotas) < 1.0)

    # archetype-granular vs individual-level pool simulation, TV <= 0.02
    schema = FeatureSchema(
        features=("first", "second"),
        values_per_feature={"first": ("a", "b"), "second": ("x", "y")},
    )
    vecs = [("a", "x"), ("a", "y"), ("b", "x"), ("b", "y")]
    background = Dataset(
        schema=schema,
        agents=tuple(Agent(id=f"b{i}", vector=v) for i, v in enumerate(vecs)),
        kind="background",
    )
    theta = np.array([math.log(0.9), 0.0, math.log(0.6), 0.0, math.log(0.5)])
    model = ParticipationModel(theta=theta, schema=schema, qbar=0.4)
    n, r, runs = 20, 8, 100_000
    pop = synthesize_population(background, model, n, seed=1009)

    gen_arch = split_stream(900, 0).generator
    arch_sizes = np.array([
        gen_arch.binomial(gen_arch.multivariate_hypergeometric(pop.counts, r), pop.q).sum()
        for _ in range(runs)
    ])
    gen_ind = split_stream(901, 0).generator
    individual_q = np.repeat(pop.q, pop.counts)
    ind_sizes = np.empty(runs, dtype=np.int64)
    for t in range(runs):
        recipients = gen_ind.choice(n, size=r, replace=False)
        ind_sizes[t] = int((gen_ind.random(r) < individual_q[recipients]).sum())
    tv = 0.5 * sum(
        abs((arch_sizes == s).mean() - (ind_sizes == s).mean()) for s in range(r + 1)
    )
    assert tv <= 0.02
    report(9, "apportionment identities and pool-simulation equivalence",
           f"TV distance {tv:.4f}")
