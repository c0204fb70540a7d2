"""Dense linear algebra and LP support: nullspace directions, a
bounded-variable equality-constrained simplex solver, and seeded
counter-based random streams.

All floating tolerances used across the package live in one record so tests
and modules agree.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .errors import NumericalFailure

__all__ = [
    "TOL",
    "Tolerances",
    "LinearProgram",
    "LpSolution",
    "RandomStream",
    "nullspace_direction",
    "solve_lp",
    "split_stream",
]


@dataclass(frozen=True)
class Tolerances:
    feasibility: float = 1e-8   # equality residual, scaled by 1+||b||_inf
    pivot: float = 1e-12        # smallest acceptable pivot after row scaling
    snap: float = 1e-9          # distance at which values snap to 0/1 integrality


TOL = Tolerances()


def nullspace_direction(A) -> Optional[np.ndarray]:
    """A nonzero v with A @ v = 0, or None iff the kernel is trivial.

    Deterministic: v is the first kernel basis vector produced by
    column-pivoted Gaussian elimination (largest remaining entry wins,
    ties to the lowest column index).
    """
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    if A.shape[1] == 0:
        return None
    found, v = kernels.nullspace_first_basis(np.ascontiguousarray(A), TOL.pivot)
    if not found:
        return None
    resid = np.max(np.abs(A @ v))
    if resid > 1e-9 * np.max(np.abs(v)):
        raise NumericalFailure(f"nullspace residual {resid:.3e} too large")
    return v


# ---------------------------------------------------------------------------
# linear programming
# ---------------------------------------------------------------------------

@dataclass
class LinearProgram:
    """minimize objective @ x  s.t.  eq_lhs @ x = eq_rhs, lower <= x <= upper.

    All bounds are finite; callers box free variables with bounds wide
    enough not to bind.
    """

    objective: np.ndarray
    eq_lhs: np.ndarray
    eq_rhs: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=np.float64)
        self.eq_lhs = np.asarray(self.eq_lhs, dtype=np.float64)
        self.eq_rhs = np.asarray(self.eq_rhs, dtype=np.float64)
        self.lower = np.asarray(self.lower, dtype=np.float64)
        self.upper = np.asarray(self.upper, dtype=np.float64)
        m, n = self.eq_lhs.shape
        if self.objective.shape != (n,) or self.eq_rhs.shape != (m,):
            raise ValueError("inconsistent LP dimensions")
        if self.lower.shape != (n,) or self.upper.shape != (n,):
            raise ValueError("inconsistent bound dimensions")
        for name, arr in (("objective", self.objective), ("eq_lhs", self.eq_lhs),
                          ("eq_rhs", self.eq_rhs), ("lower", self.lower),
                          ("upper", self.upper)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite entries in {name}")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")

    @property
    def num_vars(self) -> int:
        return self.eq_lhs.shape[1]


@dataclass
class LpSolution:
    x: np.ndarray
    objective_value: float
    status: str  # optimal | infeasible | unbounded


_DENSE_MAX_ROWS = 300
_DENSE_MAX_CELLS = 150_000


def solve_lp(lp: LinearProgram, backend: str = "auto") -> LpSolution:
    """Solve a bounded-variable equality LP.

    backend: "dense" (built-in simplex), "highs" (scipy), or "auto",
    which picks the dense solver for small instances and HiGHS beyond
    that. Both are deterministic for identical input.
    """
    if backend == "auto":
        m, n = lp.eq_lhs.shape
        backend = "dense" if m <= _DENSE_MAX_ROWS and m * (n + m) <= _DENSE_MAX_CELLS else "highs"
    if backend == "dense":
        status, x = _dense_simplex(lp.objective, lp.eq_lhs, lp.eq_rhs, lp.lower, lp.upper)
    elif backend == "highs":
        status, x = _solve_highs(lp)
    else:
        raise ValueError(f"unknown LP backend {backend!r}")
    obj = float(lp.objective @ x) if status == "optimal" else float("nan")
    return LpSolution(x=x, objective_value=obj, status=status)


def _solve_highs(lp: LinearProgram):
    from scipy.optimize import linprog

    res = linprog(
        lp.objective,
        A_eq=lp.eq_lhs,
        b_eq=lp.eq_rhs,
        bounds=np.column_stack([lp.lower, lp.upper]),
        method="highs",
    )
    if res.status == 0:
        return "optimal", np.asarray(res.x, dtype=np.float64)
    if res.status == 2:
        return "infeasible", np.zeros(lp.num_vars)
    if res.status == 3:
        return "unbounded", np.zeros(lp.num_vars)
    raise NumericalFailure(f"HiGHS failed with status {res.status}: {res.message}")


def _dense_simplex(c, A, b, lo, hi):
    """Two-phase bounded-variable simplex on a dense tableau.

    Entering variable: most-improving reduced cost with lowest-index
    tie-breaking, switching to Bland's rule (lowest eligible index, lowest
    leaving index) after a degenerate streak. Deterministic throughout.
    """
    m, n = A.shape
    if m == 0:
        x = np.where(c > 0, lo, np.where(c < 0, hi, lo)).astype(np.float64)
        return "optimal", x

    # Row equilibration so the pivot threshold is meaningful.
    scale = np.max(np.abs(A), axis=1)
    empty = scale <= 0.0
    if np.any(empty):
        if np.any(np.abs(b[empty]) > TOL.feasibility * (1.0 + np.max(np.abs(b)))):
            return "infeasible", np.zeros(n)
        keep = ~empty
        A, b = A[keep], b[keep]
        scale = scale[keep]
        m = A.shape[0]
        if m == 0:
            return _dense_simplex(c, np.zeros((0, n)), np.zeros(0), lo, hi)
    A = A / scale[:, None]
    b = b / scale
    feas_tol = TOL.feasibility * (1.0 + np.max(np.abs(b)))

    resid = b - A @ lo
    sign = np.where(resid >= 0, 1.0, -1.0)
    n_tot = n + m
    A_ext = np.zeros((m, n_tot))
    A_ext[:, :n] = A
    A_ext[np.arange(m), n + np.arange(m)] = sign

    lo_ext = np.concatenate([lo, np.zeros(m)])
    hi_ext = np.concatenate([hi, np.abs(resid)])

    basis = n + np.arange(m)
    B_inv = np.diag(sign).astype(np.float64)
    x_basic = np.abs(resid)
    at_upper = np.zeros(n_tot, dtype=bool)  # rest position of nonbasic variables
    frozen = np.zeros(n_tot, dtype=bool)
    is_basic = np.zeros(n_tot, dtype=bool)
    is_basic[basis] = True

    max_iter = 2000 + 200 * (m + n)

    def pivot_update(r, j, col):
        p = col[r]
        if abs(p) < TOL.pivot:
            raise NumericalFailure(f"pivot magnitude {abs(p):.3e} below threshold")
        B_inv[r, :] /= p
        other = col.copy()
        other[r] = 0.0
        B_inv[...] = B_inv - np.outer(other, B_inv[r, :])
        basis[r] = j
        is_basic[j] = True

    def refresh():
        """Refactorize: recompute B_inv and basic values from scratch to
        shed the drift of incremental updates."""
        nonlocal x_basic
        try:
            B_inv[...] = np.linalg.inv(A_ext[:, basis])
        except np.linalg.LinAlgError:
            raise NumericalFailure("basis matrix became singular") from None
        x_nonbasic = np.where(at_upper, hi_ext, lo_ext)
        x_nonbasic[basis] = 0.0
        x_basic = B_inv @ (b - A_ext @ x_nonbasic)

    def optimize(cost):
        nonlocal x_basic
        degen_streak = 0
        pivots = 0
        cost_tol = 1e-10 * max(1.0, float(np.max(np.abs(cost))))
        for _ in range(max_iter):
            pivots += 1
            if pivots % 150 == 0:
                refresh()
            y = cost[basis] @ B_inv
            reduced = cost - y @ A_ext
            can_enter = ~is_basic & ~frozen & (hi_ext > lo_ext)
            improving = np.where(
                at_upper, reduced > cost_tol, reduced < -cost_tol
            ) & can_enter
            if not improving.any():
                return
            bland = degen_streak > 60  # anti-cycling fallback
            if bland:
                j = int(np.flatnonzero(improving)[0])
            else:
                score = np.where(improving, np.abs(reduced), -1.0)
                j = int(np.argmax(score))
            direction = -1.0 if at_upper[j] else 1.0
            col = B_inv @ A_ext[:, j]
            e = direction * col

            t_flip = hi_ext[j] - lo_ext[j]
            with np.errstate(divide="ignore", invalid="ignore"):
                t_lo = np.where(e > TOL.pivot, (x_basic - lo_ext[basis]) / e, np.inf)
                t_hi = np.where(e < -TOL.pivot, (hi_ext[basis] - x_basic) / (-e), np.inf)
            ratios = np.maximum(np.minimum(t_lo, t_hi), 0.0)
            t_basic = float(np.min(ratios)) if m else np.inf

            if t_flip <= t_basic:
                x_basic = x_basic - e * t_flip
                at_upper[j] = not at_upper[j]
                step = t_flip
            else:
                near = ratios <= t_basic + 1e-12 * (1.0 + t_basic)
                cand = np.flatnonzero(near)
                if bland:
                    r = int(cand[np.argmin(basis[cand])])
                else:
                    r = int(cand[np.argmax(np.abs(e[cand]))])
                step = float(ratios[r])
                leaving = basis[r]
                x_basic = x_basic - e * step
                entering_value = (hi_ext[j] - step) if at_upper[j] else (lo_ext[j] + step)
                # leaving variable rests exactly on the bound it hit
                left_at_upper = bool(e[r] < 0)
                at_upper[leaving] = left_at_upper
                is_basic[leaving] = False
                if leaving >= n and not left_at_upper:
                    frozen[leaving] = True  # artificial retired at zero
                pivot_update(r, j, col)
                x_basic[r] = entering_value
            degen_streak = degen_streak + 1 if step <= 1e-12 else 0
        raise NumericalFailure("simplex iteration limit reached")

    # Phase I: drive artificial variables to zero.
    phase1 = np.zeros(n_tot)
    phase1[n:] = 1.0
    optimize(phase1)
    infeas = float(np.sum(np.abs(x_basic[basis >= n])))
    stuck_up = ~is_basic[n:] & at_upper[n:]
    if stuck_up.any():
        infeas += float(np.sum(hi_ext[n:][stuck_up]))
    if infeas > feas_tol:
        return "infeasible", np.zeros(n)

    # Pivot remaining artificials out of the basis where a pivot exists.
    for r in range(m):
        if basis[r] < n:
            continue
        row = B_inv[r, :] @ A_ext[:, :n]
        row[is_basic[:n]] = 0.0
        j = int(np.argmax(np.abs(row)))
        if abs(row[j]) > 1e-9:
            leaving = basis[r]
            is_basic[leaving] = False
            at_upper[leaving] = False
            col = B_inv @ A_ext[:, j]
            pivot_update(r, j, col)
            x_basic[r] = hi_ext[j] if at_upper[j] else lo_ext[j]
            at_upper[j] = False
    frozen[n:] = True
    hi_ext[n:] = 0.0  # any artificial still basic is pinned (redundant row)

    # Phase II on the original objective.
    phase2 = np.concatenate([c, np.zeros(m)])
    optimize(phase2)

    refresh()
    x_full = np.where(at_upper, hi_ext, lo_ext)
    x_full[basis] = x_basic
    x = np.clip(x_full[:n], lo, hi)
    if np.max(np.abs(A @ x - b)) > 10 * feas_tol:
        raise NumericalFailure("solution lost feasibility")
    return "optimal", x


# ---------------------------------------------------------------------------
# incremental simplex for column generation
# ---------------------------------------------------------------------------

class IncrementalSimplex:
    """Bounded-variable primal simplex over fixed equality rows with
    appendable columns and a persistent (warm) basis.

    Designed for column generation: appending a column keeps the current
    basis feasible (the new variable rests at its lower bound), so each
    re-optimization typically needs only a few pivots. The basis inverse is
    kept in product form (dense factor plus eta updates) and refactorized
    periodically to shed drift. The caller supplies the initial feasible
    basis; there is no phase-1.
    """

    def __init__(self, rhs, refactor_every: int = 350):
        self.b = np.asarray(rhs, dtype=np.float64)
        self.m = self.b.size
        self.refactor_every = refactor_every
        self.col_idx: list[np.ndarray] = []
        self.col_val: list[np.ndarray] = []
        self.cost = np.zeros(0)
        self.lo = np.zeros(0)
        self.hi = np.zeros(0)
        self.x = np.zeros(0)
        self.at_upper = np.zeros(0, dtype=bool)
        self.twin = np.zeros(0, dtype=np.int64)  # sign-twin variable or -1
        self.basis = None  # np.int64 array of m column indices
        self._Binv0 = None
        self._etas: list[tuple[int, Optional[np.ndarray]]] = []  # eta or None (row sign flip)
        self._csc = None
        self._has_twins = False
        self.pivot_count = 0  # diagnostics

    @property
    def num_vars(self) -> int:
        return int(self.cost.size)

    def add_column(self, idx, val, cost: float, lo: float, hi: float) -> int:
        """Append a variable resting at its lower bound; returns its index."""
        j = self.cost.size
        self.col_idx.append(np.asarray(idx, dtype=np.int64))
        self.col_val.append(np.asarray(val, dtype=np.float64))
        self.cost = np.append(self.cost, float(cost))
        self.lo = np.append(self.lo, float(lo))
        self.hi = np.append(self.hi, float(hi))
        self.x = np.append(self.x, float(lo))
        self.at_upper = np.append(self.at_upper, False)
        self.twin = np.append(self.twin, -1)
        self._csc = None
        return j

    def link_pair(self, a: int, b: int) -> None:
        """Mark two variables as sign twins (columns that are negatives of
        each other, both bounded below at 0): the ratio test may then pass
        through their breakpoints in one long step, swapping identities."""
        self.twin[a] = b
        self.twin[b] = a
        self._has_twins = True

    def set_basis(self, basis, values, at_upper=None) -> None:
        """Install a feasible starting basis with explicit variable values."""
        self.basis = np.asarray(basis, dtype=np.int64)
        if self.basis.size != self.m:
            raise NumericalFailure("basis must contain one column per row")
        for j, v in values.items():
            self.x[j] = float(v)
        if at_upper:
            for j in at_upper:
                self.at_upper[j] = True
        self._refactorize()

    # -- linear algebra helpers --

    def _ensure_csc(self):
        if self._csc is None:
            import scipy.sparse as sp

            n = self.num_vars
            indptr = np.zeros(n + 1, dtype=np.int64)
            for j in range(n):
                indptr[j + 1] = indptr[j] + self.col_idx[j].size
            indices = np.concatenate(self.col_idx) if n else np.zeros(0, dtype=np.int64)
            data = np.concatenate(self.col_val) if n else np.zeros(0)
            self._csc = sp.csc_matrix((data, indices, indptr), shape=(self.m, n))
        return self._csc

    def _column_dense(self, j) -> np.ndarray:
        out = np.zeros(self.m)
        out[self.col_idx[j]] = self.col_val[j]
        return out

    def _ftran(self, v: np.ndarray) -> np.ndarray:
        w = self._Binv0 @ v
        for r, eta in self._etas:
            if eta is None:  # row sign flip
                w[r] = -w[r]
                continue
            wr = w[r]
            if wr != 0.0:
                w += eta * wr
                w[r] -= wr
        return w

    def _btran(self, u: np.ndarray) -> np.ndarray:
        u = u.copy()
        for r, eta in reversed(self._etas):
            if eta is None:
                u[r] = -u[r]
            else:
                u[r] = float(u @ eta)
        return u @ self._Binv0

    def _swap_passed(self, passed, x, at_up, e, d, step, lo) -> None:
        """Finish a long step: each passed sign-twin breakpoint swaps the
        basic identity to its twin, which negates one row of the basis
        inverse (a sign-flip eta) and of the current direction."""
        for rr in passed:
            old = int(self.basis[rr])
            tw = int(self.twin[old])
            self.basis[rr] = tw
            x[tw] = -x[old]
            x[old] = 0.0
            at_up[old] = False
            self._etas.append((rr, None))
            e[rr] = -e[rr]
            d[rr] = -d[rr]

    def _refactorize(self) -> None:
        B = np.zeros((self.m, self.m))
        for pos, j in enumerate(self.basis):
            B[self.col_idx[j], pos] = self.col_val[j]
        try:
            self._Binv0 = np.linalg.inv(B)
        except np.linalg.LinAlgError:
            raise NumericalFailure("basis matrix became singular") from None
        self._etas = []
        # recompute basic values from the nonbasic rest positions
        A = self._ensure_csc()
        x_nb = self.x.copy()
        x_nb[self.basis] = 0.0
        resid = self.b - A @ x_nb
        self.x[self.basis] = self._Binv0 @ resid

    # -- main loop --

    def optimize(self, max_pivots: int = 200_000) -> float:
        if self.basis is None:
            raise NumericalFailure("set_basis must be called before optimize")
        A = self._ensure_csc()
        cost = self.cost
        lo = self.lo
        hi = self.hi
        x = self.x
        at_up = self.at_upper
        cost_tol = 1e-10 * max(1.0, float(np.max(np.abs(cost))) if cost.size else 1.0)
        degen_streak = 0
        fixed = hi <= lo

        for _ in range(max_pivots):
            self.pivot_count += 1
            y = self._btran(cost[self.basis])
            reduced = cost - (A.T @ y)
            improving = np.where(at_up, reduced > cost_tol, reduced < -cost_tol)
            improving[self.basis] = False
            improving[fixed] = False
            if not improving.any():
                return float(cost @ x)
            if degen_streak > 60:  # Bland fallback
                j = int(np.flatnonzero(improving)[0])
            else:
                score = np.where(improving, np.abs(reduced), -1.0)
                j = int(np.argmax(score))
            direction = -1.0 if at_up[j] else 1.0
            d = self._ftran(self._column_dense(j))
            e = direction * d

            xb = x[self.basis]
            with np.errstate(divide="ignore", invalid="ignore"):
                t_lo = np.where(e > TOL.pivot, (xb - lo[self.basis]) / e, np.inf)
                t_hi = np.where(e < -TOL.pivot, (hi[self.basis] - xb) / (-e), np.inf)
            ratios = np.maximum(np.minimum(t_lo, t_hi), 0.0)
            t_basic = float(np.min(ratios))
            t_flip = hi[j] - lo[j]

            passed: list[int] = []
            r = -1
            if self._has_twins and degen_streak <= 60:
                # long-step ratio test: walk breakpoints in order, passing
                # sign-twin variables (their identity swaps) while the
                # directional objective rate stays negative
                slope = float(reduced[j]) if not at_up[j] else -float(reduced[j])
                basis_set = set(self.basis.tolist())
                order = np.argsort(ratios, kind="stable")
                for rr in order:
                    t_rr = float(ratios[rr])
                    if t_rr > t_flip or not np.isfinite(t_rr):
                        break
                    var = int(self.basis[rr])
                    tw = int(self.twin[var])
                    hits_lower = e[rr] > 0
                    passable = (
                        tw >= 0
                        and hits_lower
                        and lo[var] == 0.0
                        and tw not in basis_set
                        and not at_up[tw]
                    )
                    if not passable:
                        r = int(rr)
                        break
                    gain = abs(e[rr]) * (cost[var] + cost[tw])
                    if slope + gain >= -cost_tol:
                        r = int(rr)
                        break
                    slope += gain
                    passed.append(int(rr))
                else:
                    r = -1  # every finite breakpoint passed; bound flip stops
                if r >= 0 and ratios[r] >= t_flip:
                    r = -1
            else:
                if t_basic < t_flip:
                    near = ratios <= t_basic + 1e-12 * (1.0 + t_basic)
                    cand = np.flatnonzero(near)
                    if degen_streak > 60:
                        r = int(cand[np.argmin(self.basis[cand])])
                    else:
                        r = int(cand[np.argmax(np.abs(e[cand]))])

            if r < 0:
                # entering variable travels to its opposite bound
                step = t_flip
                x[self.basis] = xb - e * step
                self._swap_passed(passed, x, at_up, e, d, step, lo)
                x[j] = lo[j] if at_up[j] else hi[j]
                at_up[j] = not at_up[j]
            else:
                p_raw = d[r]
                if abs(p_raw) < TOL.pivot:
                    raise NumericalFailure(f"pivot magnitude {abs(p_raw):.3e} below threshold")
                step = float(ratios[r])
                leaving = int(self.basis[r])
                x[self.basis] = xb - e * step
                self._swap_passed(passed, x, at_up, e, d, step, lo)
                entering_value = (hi[j] - step) if at_up[j] else (lo[j] + step)
                left_at_upper = bool(e[r] < 0)
                at_up[leaving] = left_at_upper
                x[leaving] = hi[leaving] if left_at_upper else lo[leaving]
                self.basis[r] = j
                x[j] = entering_value
                eta = -d / d[r]
                eta[r] = 1.0 / d[r]
                self._etas.append((r, eta))
                if len(self._etas) >= self.refactor_every:
                    self._refactorize()
            degen_streak = degen_streak + 1 if step <= 1e-12 else 0
        raise NumericalFailure("incremental simplex pivot limit reached")

    def values(self, indices) -> np.ndarray:
        return self.x[np.asarray(indices, dtype=np.int64)]

    def duals(self) -> np.ndarray:
        """Row duals at the current basis."""
        return self._btran(self.cost[self.basis])

    def residual(self) -> float:
        A = self._ensure_csc()
        return float(np.max(np.abs(self.b - A @ self.x)))


# ---------------------------------------------------------------------------
# random streams
# ---------------------------------------------------------------------------

class RandomStream:
    """A reproducible substream of a counter-based generator.

    Identical (seed, stream_index) pairs produce identical draw sequences
    on every platform: the pair forms the 128-bit Philox key, so distinct
    indices give statistically independent streams without jumping.
    """

    def __init__(self, seed: int, stream_index: int = 0):
        if stream_index < 0:
            raise ValueError("stream_index must be nonnegative")
        self.seed = int(seed)
        self.stream_index = int(stream_index)
        key = np.array([self.seed % 2**64, self.stream_index % 2**64], dtype=np.uint64)
        self.generator = np.random.Generator(np.random.Philox(key=key))

    def child(self, offset: int) -> "RandomStream":
        """Derived stream; callers keep offsets disjoint per parent."""
        return RandomStream(self.seed, self.stream_index + 1 + offset)

    def __repr__(self):
        return f"RandomStream(seed={self.seed}, stream_index={self.stream_index})"


def split_stream(seed: int, index: int) -> RandomStream:
    """Reproducible, independent-seeming substream for the given index."""
    return RandomStream(seed, index)
