"""Command-line surface: estimate, select, simulate, diagnose, compare.

Every subcommand reads an optional TOML/JSON config file; command-line
flags override config values. Outputs are plot-ready data files (CSV/JSON),
never rendered plots.

Exit codes: 0 success, 2 usage or config error, 3 bad pool under the strict
policy, 4 quota infeasible, 5 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .errors import (
    BadPool,
    FairpanelError,
    IterationLimit,
    NumericalFailure,
    QuotaInfeasible,
    QuotaViolation,
    RestartLimit,
    Stalled,
)
from .learning import (
    ParticipationModel,
    build_design,
    estimate_qbar,
    fit_mle,
    household_average,
    mean_predicted_q,
)
from .marginals import (
    DEFAULT_EXPONENT,
    Instance,
    assign_marginals,
    compute_quotas,
    rescale_and_cap,
)
from .numerics import split_stream
from .rounding import DEFAULT_EPSILON, build_panel_distribution, sample_panel
from .schema import (
    Dataset,
    FeatureSchema,
    load_dataset,
    pair_indicator_matrix,
    population_stats_from_background,
)
from .simulator import (
    estimate_end_to_end,
    hypothetical_pool,
    pairwise_intersection_table,
    q_histogram,
    synthesize_population,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_BAD_POOL = 3
EXIT_QUOTA_INFEASIBLE = 4
EXIT_NUMERICAL = 5


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise FairpanelError(f"config file {path} does not exist")
    text = p.read_bytes()
    if p.suffix.lower() == ".json":
        return json.loads(text)
    try:
        import tomllib  # Python >= 3.11
    except ImportError:
        import tomli as tomllib
    return tomllib.loads(text.decode("utf-8"))


def _merged(args: argparse.Namespace, config: dict, key: str, default=None, required=False):
    """Flag wins over config file wins over default."""
    value = getattr(args, key.replace("-", "_"), None)
    if value is None:
        value = config.get(key, default)
    if required and value is None:
        raise FairpanelError(f"missing required option --{key}")
    return value


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise FairpanelError(f"{what} file {p} does not exist")
    return p


def _out_dir(args, config) -> Path:
    out = Path(_merged(args, config, "out-dir", default="out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_csv(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _load_common(args, config):
    schema = FeatureSchema.from_json_file(_require_file(_merged(args, config, "schema", required=True), "schema"))
    return schema


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_estimate(args, config) -> int:
    schema = _load_common(args, config)
    pool = load_dataset(_require_file(_merged(args, config, "pool", required=True), "pool"), schema, "pool")
    background = load_dataset(
        _require_file(_merged(args, config, "background", required=True), "background"),
        schema, "background",
    )
    qbar = _merged(args, config, "qbar")
    letters = _merged(args, config, "letters")
    if qbar is None:
        if letters is None:
            raise FairpanelError("either --qbar or --letters is required")
        persons = _merged(args, config, "persons-per-household")
        if persons is None:
            persons = household_average(background)
        qbar = estimate_qbar(len(pool), int(letters), float(persons))
    qbar = float(qbar)

    step = float(_merged(args, config, "step", default=1e-5))
    iters = int(_merged(args, config, "iters", default=100_000))
    rows = build_design(pool, background)
    model = fit_mle(
        rows, qbar, background.total_weight, len(pool),
        schema=schema, step=step, iters=iters,
    )

    out = _out_dir(args, config)
    schema_path = str(_merged(args, config, "schema"))
    model.save(out / "model.json", schema_ref=schema_path)
    _write_csv(
        out / "beta_report.csv",
        ["feature", "value", "beta"],
        [(f, v, f"{b:.10g}") for f, v, b in model.beta_table()],
    )
    mean_q = mean_predicted_q(model, background)
    calibration = {
        "qbar": qbar,
        "mean_predicted_q_background": mean_q,
        "gap_percentage_points": 100.0 * (mean_q - qbar),
    }
    with open(out / "calibration.json", "w", encoding="utf-8") as fh:
        json.dump(calibration, fh, indent=1)
    print(f"model written to {out/'model.json'}; "
          f"mean predicted q over background {mean_q:.4%} vs qbar {qbar:.4%}")
    return EXIT_OK


def cmd_select(args, config) -> int:
    from .learning import predict_q_dataset

    schema = _load_common(args, config)
    pool = load_dataset(_require_file(_merged(args, config, "pool", required=True), "pool"), schema, "pool")
    background = load_dataset(
        _require_file(_merged(args, config, "background", required=True), "background"),
        schema, "background",
    )
    model = ParticipationModel.load(
        _require_file(_merged(args, config, "model", required=True), "model"), schema
    )
    n = int(_merged(args, config, "population-n", required=True))
    r = int(_merged(args, config, "letters", required=True))
    k = int(_merged(args, config, "panel-size", required=True))
    epsilon = float(_merged(args, config, "epsilon", default=DEFAULT_EPSILON))
    exponent = float(_merged(args, config, "exponent", default=DEFAULT_EXPONENT))
    policy = str(_merged(args, config, "policy", default="strict"))
    seed = int(_merged(args, config, "seed", default=0))
    if not (1 <= k <= r):
        raise FairpanelError(f"need 1 <= k <= r, got k={k}, r={r}")
    if epsilon <= 0:
        raise FairpanelError("epsilon must be positive")

    stats = population_stats_from_background(background, n)
    q = predict_q_dataset(model, pool)
    q_star = float(q.min())
    instance = Instance.build(stats, r=r, k=k, q_star=q_star)
    assignment = assign_marginals(pool, q, instance, exponent)
    verdict = assignment.good
    print(f"good-pool verdict: {verdict.summary()} (alpha={instance.alpha:.3f})")

    pi = assignment.pi
    capped = False
    if not verdict.good_under(policy):
        if policy == "strict":
            raise BadPool(verdict)
        if not verdict.cond2_ok:
            raise BadPool(verdict)
        if not verdict.cond1_ok:
            pi = rescale_and_cap(pi, k)
            capped = True

    quotas = compute_quotas(instance, exponent)
    dist = build_panel_distribution(pi, pool, quotas, epsilon=epsilon)
    panel = sample_panel(dist, split_stream(seed, 0))

    out = _out_dir(args, config)
    dist.save(out / "distribution.json")
    with open(out / "panel.json", "w", encoding="utf-8") as fh:
        json.dump(
            {
                "members": sorted(panel.members),
                "seat_counts": {f"{f}={v}": c for (f, v), c in panel.seat_counts.items()},
            },
            fh, indent=1,
        )

    R = pair_indicator_matrix(pool)
    expected = R @ pi
    realized = np.array([panel.seat_counts[p] for p in schema.pairs], dtype=float)
    rows = []
    for i, pair in enumerate(schema.pairs):
        lo, hi = quotas.bounds[pair]
        rows.append((
            f"{pair[0]}={pair[1]}",
            f"{k * stats.share(pair):.6f}",
            f"{expected[i]:.6f}",
            int(realized[i]),
            lo,
            hi,
        ))
    _write_csv(
        out / "audit.csv",
        ["pair", "proportional_seats", "expected_seats", "realized_seats", "lower_quota", "upper_quota"],
        rows,
    )
    print(
        f"panel of {len(panel.members)} written to {out/'panel.json'}; "
        f"distribution over {len(dist.panels)} panels, max marginal error "
        f"{dist.max_marginal_error:.2e}" + (" (marginals capped at 1)" if capped else "")
    )
    return EXIT_OK


def _load_population(args, config):
    schema = _load_common(args, config)
    background = load_dataset(
        _require_file(_merged(args, config, "background", required=True), "background"),
        schema, "background",
    )
    model = ParticipationModel.load(
        _require_file(_merged(args, config, "model", required=True), "model"), schema
    )
    n = int(_merged(args, config, "population-n", required=True))
    seed = int(_merged(args, config, "seed", default=0))
    return schema, background, model, synthesize_population(background, model, n, seed), seed


def _run_simulation(pop, r_values, k, pools, policy, algorithms, seed, trials, out: Path):
    from .numerics import RandomStream

    written = []
    for algorithm in algorithms:
        for r in r_values:
            report = estimate_end_to_end(
                pop, r=int(r), k=k, pools=pools, policy=policy,
                algorithm=algorithm, rng=RandomStream(seed, 0),
                trials_per_pool=trials,
            )
            base = out / f"endtoend_{algorithm}_r{int(r)}"
            report.write_csv(base.with_suffix(".csv"))
            report.write_json(base.with_suffix(".json"))
            written.append(base.with_suffix(".csv"))
            kn = k / pop.n
            print(
                f"{algorithm} r={r}: estimates/ (k/n) in "
                f"[{report.estimates.min()/kn:.3f}, {report.estimates.max()/kn:.3f}], "
                f"bad pools {report.bad_pools}/{pools}"
            )
    return written


def cmd_simulate(args, config) -> int:
    _, _, _, pop, seed = _load_population(args, config)
    r_values = _merged(args, config, "letters", required=True)
    if isinstance(r_values, (int, float, str)):
        r_values = [int(r_values)]
    k = int(_merged(args, config, "panel-size", required=True))
    pools = int(_merged(args, config, "pools", default=10_000))
    policy = str(_merged(args, config, "policy", default="strict"))
    algorithm = str(_merged(args, config, "algorithm", default="ours"))
    trials = int(_merged(args, config, "trials", default=10))
    out = _out_dir(args, config)
    _run_simulation(pop, r_values, k, pools, policy, [algorithm], seed, trials, out)
    return EXIT_OK


def cmd_compare(args, config) -> int:
    _, _, _, pop, seed = _load_population(args, config)
    r_values = _merged(args, config, "letters", required=True)
    if isinstance(r_values, (int, float, str)):
        r_values = [int(r_values)]
    k = int(_merged(args, config, "panel-size", required=True))
    pools = int(_merged(args, config, "pools", default=10_000))
    policy = str(_merged(args, config, "policy", default="relaxed"))
    trials = int(_merged(args, config, "trials", default=10))
    out = _out_dir(args, config)
    _run_simulation(pop, r_values, k, pools, policy, ["ours", "greedy", "uniform"], seed, trials, out)
    return EXIT_OK


def cmd_diagnose(args, config) -> int:
    schema = _load_common(args, config)
    pool = load_dataset(_require_file(_merged(args, config, "pool", required=True), "pool"), schema, "pool")
    background = load_dataset(
        _require_file(_merged(args, config, "background", required=True), "background"),
        schema, "background",
    )
    model = ParticipationModel.load(
        _require_file(_merged(args, config, "model", required=True), "model"), schema
    )
    min_count = int(_merged(args, config, "suppress-below", default=7))
    out = _out_dir(args, config)

    # pool vs background composition
    pool_R = pair_indicator_matrix(pool)
    pool_fracs = pool_R.sum(axis=1) / max(len(pool), 1)
    bg_weights = np.array([a.weight for a in background.agents])
    bg_R = pair_indicator_matrix(background)
    bg_fracs = (bg_R @ bg_weights) / bg_weights.sum()
    _write_csv(
        out / "composition.csv",
        ["pair", "pool_fraction", "background_fraction"],
        [
            (f"{f}={v}", f"{pool_fracs[i]:.8f}", f"{bg_fracs[i]:.8f}")
            for i, (f, v) in enumerate(schema.pairs)
        ],
    )

    _write_csv(
        out / "beta_report.csv",
        ["feature", "value", "beta"],
        [(f, v, f"{b:.10g}") for f, v, b in model.beta_table()],
    )

    for name, ds in (("pool", pool), ("background", background)):
        rows = q_histogram(ds, model, min_count=min_count)
        _write_csv(
            out / f"q_histogram_{name}.csv",
            ["bin_low", "bin_high", "count", "weight", "q_mass", "suppressed"],
            [(r["bin_low"], r["bin_high"], r["count"], r["weight"], r["q_mass"], int(r["suppressed"])) for r in rows],
        )

    hypo = hypothetical_pool(background, model)
    hypo_total = sum(hypo.values()) / schema.num_features
    _write_csv(
        out / "hypothetical_vs_pool.csv",
        ["pair", "pool_fraction", "hypothetical_fraction"],
        [
            (f"{f}={v}", f"{pool_fracs[i]:.8f}", f"{hypo[(f, v)] / hypo_total:.8f}")
            for i, (f, v) in enumerate(schema.pairs)
        ],
    )

    table = pairwise_intersection_table(pool, background, model)
    _write_csv(
        out / "two_correlations.csv",
        ["pair_a", "pair_b", "pool_fraction", "hypothetical_fraction"],
        [
            (f"{fa}={va}", f"{fb}={vb}", f"{pf:.8f}", f"{hf:.8f}")
            for (fa, va), (fb, vb), pf, hf in table
        ],
    )
    print(f"diagnostics written to {out}/")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _add_common(sub):
    sub.add_argument("--config", help="TOML or JSON config file; flags override")
    sub.add_argument("--schema", help="schema JSON path")
    sub.add_argument("--out-dir", dest="out_dir", help="output directory (default: out)")
    sub.add_argument("--seed", type=int, help="random seed (default 0)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fairpanel",
        description="Self-selection-corrected sortition panel selection toolkit.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("estimate", help="fit participation probabilities from pool + background")
    _add_common(p)
    p.add_argument("--pool")
    p.add_argument("--background")
    p.add_argument("--qbar", type=float, help="mean participation probability")
    p.add_argument("--letters", type=int, help="invitation letters sent (to derive qbar)")
    p.add_argument("--persons-per-household", dest="persons_per_household", type=float)
    p.add_argument("--step", type=float, help="ascent step size (default 1e-5)")
    p.add_argument("--iters", type=int, help="ascent iterations (default 100000)")

    p = subs.add_parser("select", help="compute marginals, build the panel lottery, sample a panel")
    _add_common(p)
    p.add_argument("--pool")
    p.add_argument("--background")
    p.add_argument("--model")
    p.add_argument("--population-n", dest="population_n", type=int)
    p.add_argument("--letters", type=int, help="invitation letters r")
    p.add_argument("--panel-size", dest="panel_size", type=int)
    p.add_argument("--epsilon", type=float, help="marginal accuracy (default 1e-6)")
    p.add_argument("--exponent", type=float, help="concentration-band exponent (default 0.49)")
    p.add_argument("--policy", choices=["strict", "relaxed"])

    for name, extra in (("simulate", False), ("compare", True)):
        p = subs.add_parser(
            name,
            help="estimate end-to-end probabilities over simulated pools"
            + (" for ours vs greedy vs uniform" if extra else ""),
        )
        _add_common(p)
        p.add_argument("--background")
        p.add_argument("--model")
        p.add_argument("--population-n", dest="population_n", type=int)
        p.add_argument("--letters", type=int, nargs="+", help="one or more r values")
        p.add_argument("--panel-size", dest="panel_size", type=int)
        p.add_argument("--pools", type=int)
        p.add_argument("--policy", choices=["strict", "relaxed"])
        p.add_argument("--trials", type=int, help="greedy trials per pool (default 10)")
        if not extra:
            p.add_argument("--algorithm", choices=["ours", "greedy", "uniform"])

    p = subs.add_parser("diagnose", help="model-fit diagnostics (composition, histograms, 2-correlations)")
    _add_common(p)
    p.add_argument("--pool")
    p.add_argument("--background")
    p.add_argument("--model")
    p.add_argument("--suppress-below", dest="suppress_below", type=int,
                   help="suppress histogram bins with fewer individuals (default 7)")

    return parser


_COMMANDS = {
    "estimate": cmd_estimate,
    "select": cmd_select,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
    "diagnose": cmd_diagnose,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config(getattr(args, "config", None))
        return _COMMANDS[args.command](args, config)
    except BadPool as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_POOL
    except (QuotaInfeasible, QuotaViolation, RestartLimit) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_QUOTA_INFEASIBLE
    except (NumericalFailure, Stalled, IterationLimit) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (FairpanelError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
