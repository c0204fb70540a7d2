"""Phase II: round marginals into an explicit lottery over quota-feasible
panels.

``beck_fiala_round`` fixes fractional marginals to 0/1 one bound-hit at a
time while keeping the live equality rows satisfied, so the panel size is
exact and every feature-value pair ends within one seat per feature of its
expected seats. Column generation then assembles a distribution over such
panels whose per-agent inclusion probabilities match the marginals to the
requested accuracy: the dual separation problem prices a new panel (via the
objective-constrained rounding variant), the primal re-weights the support,
and the loop exits when the largest marginal error drops below epsilon.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .errors import (
    FairpanelError,
    IterationLimit,
    NumericalFailure,
    QuotaViolation,
    Stalled,
)
from .marginals import QuotaSet
from .numerics import (
    _DENSE_MAX_CELLS,
    _DENSE_MAX_ROWS,
    TOL,
    IncrementalSimplex,
    LinearProgram,
    RandomStream,
    solve_lp,
)
from .schema import Dataset, pair_indicator_matrix

DEFAULT_EPSILON = 1e-6


@dataclass(frozen=True)
class Panel:
    members: frozenset
    seat_counts: dict

    @property
    def size(self) -> int:
        return len(self.members)


@dataclass
class PanelDistribution:
    """Explicit lottery over panels implementing target marginals."""

    pool: Dataset
    panels: tuple[tuple[str, ...], ...]  # sorted member-id tuples
    weights: np.ndarray
    max_marginal_error: float

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if len(self.panels) != self.weights.size:
            raise FairpanelError("one weight per panel required")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise FairpanelError("panel weights must sum to 1")

    def implied_marginals(self) -> np.ndarray:
        """Per pool member (in pool order), the lottery's inclusion probability."""
        index = {aid: i for i, aid in enumerate(self.pool.ids)}
        out = np.zeros(len(self.pool))
        for members, w in zip(self.panels, self.weights):
            for aid in members:
                out[index[aid]] += w
        return out

    def to_dict(self) -> dict:
        return {
            "epsilon": self.max_marginal_error,
            "panels": [
                {"weight": float(w), "members": list(members)}
                for members, w in zip(self.panels, self.weights)
            ],
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path, pool: Dataset) -> "PanelDistribution":
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        panels = tuple(tuple(p["members"]) for p in data["panels"])
        weights = np.array([p["weight"] for p in data["panels"]])
        return cls(pool=pool, panels=panels, weights=weights,
                   max_marginal_error=float(data["epsilon"]))


def _validated_marginals(pi, k: int) -> np.ndarray:
    pi = np.asarray(pi, dtype=np.float64)
    if np.any(pi < -1e-12) or np.any(pi > 1 + 1e-12):
        raise FairpanelError("marginals must lie in [0, 1]")
    if abs(pi.sum() - k) > 1e-9 * max(1.0, k):
        raise FairpanelError(f"marginals sum to {pi.sum():.12f}, expected {k}")
    return np.clip(pi, 0.0, 1.0)


def _constraint_matrix(pool: Dataset) -> np.ndarray:
    """Sum row stacked over the indicator rows of pairs present in the pool."""
    R = pair_indicator_matrix(pool)
    present = R.sum(axis=1) > 0
    return np.vstack([np.ones((1, len(pool))), R[present]])


def _round_core(M, pi, c, n_features: int) -> np.ndarray:
    x = pi.copy()
    if c is None:
        c_vec = np.zeros(x.size)
        use_c = False
    else:
        c_vec = np.ascontiguousarray(np.asarray(c, dtype=np.float64))
        use_c = True
    status = kernels.bf_core(M, x, c_vec, use_c, n_features, TOL.snap, 1e-12, TOL.pivot)
    if status == kernels.BF_STALLED:
        raise NumericalFailure("rounding kernel step stalled")
    if status == kernels.BF_STUCK:
        raise NumericalFailure("rounding made no progress; inconsistent state")
    return np.rint(x).astype(np.int64)


def beck_fiala_round(
    pi: Sequence[float],
    pool: Dataset,
    c: Optional[Sequence[float]] = None,
) -> np.ndarray:
    """Deterministically round marginals to a 0/1 panel indicator vector.

    The output selects exactly k = round(sum(pi)) members, keeps every
    feature-value pair within |F| seats of its expected seats, and, when an
    objective vector c is given, never falls below the fractional objective
    value (up to float slack).
    """
    k = int(round(float(np.sum(pi))))
    pi = _validated_marginals(pi, k)
    M = _constraint_matrix(pool)
    x = _round_core(M, pi, c, pool.schema.num_features)
    _check_rounding(x, pi, pool, c)
    return x


def _check_rounding(x, pi, pool, c) -> None:
    k = int(round(float(pi.sum())))
    if int(x.sum()) != k:
        raise NumericalFailure(f"rounded panel has {int(x.sum())} members, expected {k}")
    R = pair_indicator_matrix(pool)
    dev = np.abs(R @ x - R @ pi)
    if np.any(dev > pool.schema.num_features + 1e-9):
        raise NumericalFailure(f"pair deviation {dev.max():.6f} exceeds {pool.schema.num_features}")
    if c is not None:
        c = np.asarray(c, dtype=np.float64)
        slack = 1e-7 * max(np.max(np.abs(c)), 1e-300) * k
        if float(c @ x) < float(c @ pi) - slack:
            raise NumericalFailure("objective-constrained rounding lost objective value")


# ---------------------------------------------------------------------------
# column generation
# ---------------------------------------------------------------------------

def _use_sparse(m_rows: int, n_cols: int, backend: str) -> bool:
    if backend == "dense":
        return False
    if backend == "highs":
        return True
    return not (m_rows <= _DENSE_MAX_ROWS and m_rows * (n_cols + m_rows) <= _DENSE_MAX_CELLS)


def _solve_primal(pi, member_cols, lp_backend: str):
    """min delta s.t. |pi_i - sum_{panels containing i} lambda| <= delta,
    sum(lambda) = 1. Returns (delta, lambda)."""
    n = pi.size
    t = member_cols.shape[1]
    n_vars = 1 + t + 2 * n
    m_rows = 2 * n + 1
    if _use_sparse(m_rows, n_vars, lp_backend):
        import scipy.sparse as sp
        from scipy.optimize import linprog

        eye = sp.identity(n, format="csc")
        mem = sp.csc_matrix(member_cols)
        ones_col = np.ones((n, 1))
        top = sp.hstack([ones_col, mem, -eye, sp.csc_matrix((n, n))], format="csc")
        mid = sp.hstack([-ones_col, mem, sp.csc_matrix((n, n)), eye], format="csc")
        bot = sp.hstack(
            [sp.csc_matrix(([0.0], ([0], [0])), shape=(1, 1)),
             sp.csc_matrix(np.ones((1, t))),
             sp.csc_matrix((1, 2 * n))],
            format="csc",
        )
        A = sp.vstack([top, mid, bot], format="csc")
        b = np.concatenate([pi, pi, [1.0]])
        cost = np.zeros(n_vars)
        cost[0] = 1.0
        bounds = [(0.0, 1.0)] * (1 + t) + [(0.0, 2.0)] * (2 * n)
        res = linprog(cost, A_eq=A, b_eq=b, bounds=bounds, method="highs")
        if res.status != 0:
            raise NumericalFailure(f"primal LP failed: status {res.status}")
        x = np.asarray(res.x)
    else:
        A = np.zeros((m_rows, n_vars))
        A[:n, 0] = 1.0
        A[:n, 1:1 + t] = member_cols
        A[:n, 1 + t:1 + t + n] = -np.eye(n)
        A[n:2 * n, 0] = -1.0
        A[n:2 * n, 1:1 + t] = member_cols
        A[n:2 * n, 1 + t + n:] = np.eye(n)
        A[2 * n, 1:1 + t] = 1.0
        b = np.concatenate([pi, pi, [1.0]])
        cost = np.zeros(n_vars)
        cost[0] = 1.0
        lower = np.zeros(n_vars)
        upper = np.concatenate([np.ones(1 + t), np.full(2 * n, 2.0)])
        lp = LinearProgram(objective=cost, eq_lhs=A, eq_rhs=b, lower=lower, upper=upper)
        sol = solve_lp(lp, backend=lp_backend)
        if sol.status != "optimal":
            raise NumericalFailure(f"primal LP failed: status {sol.status}")
        x = sol.x
    return float(x[0]), x[1:1 + t]


def _solve_dual(pi, member_cols, k: int, lp_backend: str):
    """max pi.z - zhat s.t. sum_{i in B} z_i <= zhat for stored panels,
    |z_i| <= 1. Returns z."""
    n = pi.size
    t = member_cols.shape[1]
    n_vars = n + 1 + t
    if _use_sparse(t, n_vars, lp_backend):
        import scipy.sparse as sp
        from scipy.optimize import linprog

        A = sp.hstack(
            [sp.csc_matrix(member_cols.T),
             sp.csc_matrix(-np.ones((t, 1))),
             sp.identity(t, format="csc")],
            format="csc",
        )
        b = np.zeros(t)
        cost = np.concatenate([-pi, [1.0], np.zeros(t)])
        bounds = [(-1.0, 1.0)] * n + [(-float(k), float(k))] + [(0.0, 2.0 * k)] * t
        res = linprog(cost, A_eq=A, b_eq=b, bounds=bounds, method="highs")
        if res.status != 0:
            raise NumericalFailure(f"dual LP failed: status {res.status}")
        x = np.asarray(res.x)
    else:
        A = np.zeros((t, n_vars))
        A[:, :n] = member_cols.T
        A[:, n] = -1.0
        A[:, n + 1:] = np.eye(t)
        b = np.zeros(t)
        cost = np.concatenate([-pi, [1.0], np.zeros(t)])
        lower = np.concatenate([-np.ones(n), [-float(k)], np.zeros(t)])
        upper = np.concatenate([np.ones(n), [float(k)], np.full(t, 2.0 * k)])
        lp = LinearProgram(objective=cost, eq_lhs=A, eq_rhs=b, lower=lower, upper=upper)
        sol = solve_lp(lp, backend=lp_backend)
        if sol.status != "optimal":
            raise NumericalFailure(f"dual LP failed: status {sol.status}")
        x = sol.x
    return x[:n]


class _WarmColumnEngines:
    """The two master LPs of the column generation, kept warm across panel
    additions.

    Both share the rows (A_i): sum_{B ni i} lam_B + ... = pi_i,
    (B_i): likewise with the opposite deviation sign, and (C): sum lam = 1.
    The max-deviation program yields delta and the weights lam; the
    total-deviation program's row duals yield an optimal (z, zhat) of the
    separation LP  max pi.z - zhat  s.t.  sum_{i in B} z_i <= zhat, |z| <= 1
    (the two programs are an LP-dual pair)."""

    def __init__(self, pi: np.ndarray):
        n = pi.size
        self.n = n

        # max-deviation program (2n+1 rows):
        #   (mem lam)_i + delta - s+_i = pi_i;  (mem lam)_i - delta + s-_i = pi_i;
        #   sum lam = 1;  minimize delta.
        inf = IncrementalSimplex(np.concatenate([pi, pi, [1.0]]))
        self.delta_var = inf.add_column(
            np.concatenate([np.arange(n), n + np.arange(n)]),
            np.concatenate([np.ones(n), -np.ones(n)]),
            cost=1.0, lo=0.0, hi=1.5,
        )
        for i in range(n):
            inf.add_column([i], [-1.0], cost=0.0, lo=0.0, hi=4.0)
        for i in range(n):
            inf.add_column([n + i], [1.0], cost=0.0, lo=0.0, hi=4.0)
        self.inf = inf

        # total-deviation program (n+1 rows):
        #   (mem lam)_i + e+_i - e-_i = pi_i;  sum lam = 1;  minimize sum(e+ + e-).
        # Its row duals are exactly an optimal (z, zhat) of the separation LP.
        l1 = IncrementalSimplex(np.concatenate([pi, [1.0]]))
        for i in range(n):
            l1.add_column([i], [1.0], cost=1.0, lo=0.0, hi=2.0)
        for i in range(n):
            l1.add_column([i], [-1.0], cost=1.0, lo=0.0, hi=2.0)
        for i in range(n):
            l1.link_pair(i, n + i)
        self.l1 = l1

        self.lam_inf: list[int] = []
        self.lam_l1: list[int] = []
        self._first = True
        self._pi = pi

    def add_panel(self, x: np.ndarray) -> None:
        members = np.flatnonzero(x)
        rows_inf = np.concatenate([members, self.n + members, [2 * self.n]])
        self.lam_inf.append(
            self.inf.add_column(rows_inf, np.ones(rows_inf.size), cost=0.0, lo=0.0, hi=2.0)
        )
        rows_l1 = np.concatenate([members, [self.n]])
        self.lam_l1.append(
            self.l1.add_column(rows_l1, np.ones(rows_l1.size), cost=0.0, lo=0.0, hi=2.0)
        )
        if self._first:
            self._install_crash_bases(x)
            self._first = False

    def _install_crash_bases(self, x0: np.ndarray) -> None:
        n = self.n
        pi = self._pi
        dev = x0.astype(np.float64) - pi
        i_star = int(np.argmax(np.abs(dev)))
        worst = float(np.abs(dev[i_star]))

        # max-deviation program: delta and lam_0 basic, one slack per row
        # except the one pinned at zero by the worst deviation
        basis = [self.delta_var, self.lam_inf[0]]
        values = {self.delta_var: worst, self.lam_inf[0]: 1.0}
        for i in range(n):
            s_plus = 1 + i
            s_minus = 1 + n + i
            if i == i_star and dev[i] < 0:
                basis.append(s_minus)
                values[s_minus] = worst - dev[i]
            elif i == i_star:
                basis.append(s_plus)
                values[s_plus] = dev[i] + worst
            else:
                basis.extend([s_plus, s_minus])
                values[s_plus] = dev[i] + worst
                values[s_minus] = worst - dev[i]
        self.inf.set_basis(basis, values)

        # total-deviation program: per row the deviation variable of the
        # matching sign, plus lam_0 for the convexity row
        basis = [self.lam_l1[0]]
        values = {self.lam_l1[0]: 1.0}
        for i in range(n):
            e_plus = i
            e_minus = n + i
            if dev[i] <= 0:  # pi_i - x0_i >= 0 absorbed by e+
                basis.append(e_plus)
                values[e_plus] = -dev[i]
            else:
                basis.append(e_minus)
                values[e_minus] = dev[i]
        self.l1.set_basis(basis, values)

    def solve_primal(self):
        delta = self.inf.optimize()
        lam = self.inf.values(self.lam_inf)
        return float(delta), lam

    def solve_dual(self) -> np.ndarray:
        self.l1.optimize()
        y = self.l1.duals()
        return np.clip(y[: self.n], -1.0, 1.0)


def build_panel_distribution(
    pi: Sequence[float],
    pool: Dataset,
    quotas: QuotaSet,
    epsilon: float = DEFAULT_EPSILON,
    max_iterations: Optional[int] = None,
    lp_backend: str = "warm",
    progress: Optional[callable] = None,
) -> PanelDistribution:
    """Column generation: grow a set of rounded panels until a distribution
    over them implements the marginals within epsilon.

    lp_backend "warm" (default) keeps both master LPs warm across
    iterations; "auto"/"dense"/"highs" re-solve them from scratch through
    the generic solver interface.
    """
    if epsilon <= 0:
        raise FairpanelError("epsilon must be positive")
    k = quotas.k
    pi = _validated_marginals(pi, k)
    n = pi.size
    if max_iterations is None:
        max_iterations = 10 * n
    M = _constraint_matrix(pool)
    R = pair_indicator_matrix(pool)
    targets = R @ pi
    nf = pool.schema.num_features
    pairs = pool.schema.pairs
    engines = _WarmColumnEngines(pi) if lp_backend == "warm" else None

    panel_rows: list[np.ndarray] = []
    seen: set[tuple[int, ...]] = set()

    def add_panel(x: np.ndarray) -> None:
        key = tuple(np.flatnonzero(x).tolist())
        if key in seen:
            raise Stalled(f"generated panel already in support (size {len(seen)})")
        if int(x.sum()) != k:
            raise NumericalFailure("generated panel has wrong size")
        counts = R @ x
        if np.any(np.abs(counts - targets) > nf + 1e-9):
            raise NumericalFailure("generated panel exceeds the per-pair deviation bound")
        for idx, pair in enumerate(pairs):
            lo, hi = quotas.bounds[pair]
            if not lo <= counts[idx] <= hi:
                raise QuotaViolation(
                    f"panel puts {int(counts[idx])} seats on {pair}, quota is {lo}..{hi}"
                )
        seen.add(key)
        panel_rows.append(x.astype(np.float64))
        if engines is not None:
            engines.add_panel(x)

    add_panel(_round_core(M, pi, None, nf))

    iterations = 0
    while True:
        if engines is not None:
            delta, lam = engines.solve_primal()
        else:
            member_cols = np.column_stack(panel_rows)
            delta, lam = _solve_primal(pi, member_cols, lp_backend)
        if progress is not None:
            progress(iterations, len(panel_rows), delta)
        if delta < epsilon:
            break
        iterations += 1
        if iterations > max_iterations:
            raise IterationLimit(
                f"column generation did not reach epsilon={epsilon} within "
                f"{max_iterations} iterations (best delta={delta:.3e})"
            )
        if engines is not None:
            z = engines.solve_dual()
        else:
            member_cols = np.column_stack(panel_rows)
            z = _solve_dual(pi, member_cols, k, lp_backend)
        add_panel(_round_core(M, pi, z, nf))

    lam = np.clip(lam, 0.0, None)
    keep = lam > 1e-15
    if not keep.any():
        keep[int(np.argmax(lam))] = True
    lam = lam[keep]
    lam = lam / lam.sum()
    kept_rows = [row for row, flag in zip(panel_rows, keep) if flag]
    implied = np.column_stack(kept_rows) @ lam
    max_err = float(np.max(np.abs(pi - implied)))
    if max_err > epsilon:
        raise NumericalFailure(
            f"support trimming lost accuracy: {max_err:.3e} > epsilon={epsilon}"
        )

    ids = pool.ids
    panels = tuple(
        tuple(sorted(ids[i] for i in np.flatnonzero(row))) for row in kept_rows
    )
    return PanelDistribution(
        pool=pool, panels=panels, weights=lam, max_marginal_error=max_err
    )


def sample_panel(dist: PanelDistribution, rng: RandomStream) -> Panel:
    """Draw one panel from the lottery (panel B with probability lambda_B)."""
    u = rng.generator.random()
    cum = np.cumsum(dist.weights)
    idx = min(int(np.searchsorted(cum, u, side="right")), len(dist.panels) - 1)
    members = frozenset(dist.panels[idx])
    by_id = {a.id: a for a in dist.pool.agents}
    seat_counts: dict = {pair: 0 for pair in dist.pool.schema.pairs}
    for aid in members:
        agent = by_id[aid]
        for f, v in zip(dist.pool.schema.features, agent.vector):
            seat_counts[(f, v)] += 1
    return Panel(members=members, seat_counts=seat_counts)
