"""Hot numeric kernels: numba-compiled loops with pure-numpy fallbacks.

Three kernels dominate runtime: column-pivoted elimination for nullspace
directions, the iterative discrepancy rounding loop, and the log-likelihood
value/gradient evaluation. Each exists in two variants:

* ``*_jit`` -- loop-style code compiled with ``numba.njit`` (default);
* ``*_numpy`` -- vectorized numpy equivalent.

Set the environment variable ``FAIRPANEL_NO_NUMBA=1`` before import to force
the numpy path (the same switch the benchmark in ``benchmarks/`` flips).
Both variants follow identical pivoting and tie-breaking rules; results may
differ only in floating-point rounding of accumulated sums.
"""

from __future__ import annotations

import os

import numpy as np

_DISABLED = bool(os.environ.get("FAIRPANEL_NO_NUMBA"))

if not _DISABLED:
    try:
        from numba import njit
        NUMBA_ENABLED = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        NUMBA_ENABLED = False
else:
    NUMBA_ENABLED = False

# Status codes returned by the rounding core.
BF_OK = 0
BF_STALLED = 1
BF_STUCK = 2


# ---------------------------------------------------------------------------
# nullspace direction
# ---------------------------------------------------------------------------

def _nullspace_loop(A, rel_tol):
    """First kernel basis vector of column-pivoted Gauss-Jordan elimination.

    Pivots are chosen as the largest remaining absolute entry, scanning
    columns first (ties resolve to the lowest column, then lowest row).
    Returns ``(found, v)`` with A @ v == 0; ``found`` is False iff the
    kernel is trivial.
    """
    m, n = A.shape
    R = A.copy()
    maxabs = 0.0
    for i in range(m):
        for j in range(n):
            a = abs(R[i, j])
            if a > maxabs:
                maxabs = a
    tol = rel_tol * (1.0 if maxabs < 1.0 else maxabs)

    pivot_col_of_row = np.full(m, -1, dtype=np.int64)
    is_pivot_col = np.zeros(n, dtype=np.bool_)
    row = 0
    while row < m:
        best = tol
        bj = -1
        bi = -1
        for j in range(n):
            if is_pivot_col[j]:
                continue
            for i in range(row, m):
                a = abs(R[i, j])
                if a > best:
                    best = a
                    bj = j
                    bi = i
        if bj < 0:
            break
        if bi != row:
            for j in range(n):
                tmp = R[row, j]
                R[row, j] = R[bi, j]
                R[bi, j] = tmp
        p = R[row, bj]
        for i in range(m):
            if i == row:
                continue
            f = R[i, bj] / p
            if f != 0.0:
                for j in range(n):
                    R[i, j] -= f * R[row, j]
            R[i, bj] = 0.0
        is_pivot_col[bj] = True
        pivot_col_of_row[row] = bj
        row += 1

    v = np.zeros(n)
    free = -1
    for j in range(n):
        if not is_pivot_col[j]:
            free = j
            break
    if free < 0:
        return False, v
    v[free] = 1.0
    for t in range(row):
        pc = pivot_col_of_row[t]
        v[pc] = -R[t, free] / R[t, pc]
    return True, v


def nullspace_first_basis_numpy(A, rel_tol):
    """Vectorized twin of the loop kernel (identical pivot choices)."""
    m, n = A.shape
    R = np.array(A, dtype=np.float64, copy=True)
    maxabs = np.max(np.abs(R)) if R.size else 0.0
    tol = rel_tol * max(1.0, maxabs)

    pivot_col_of_row = np.full(m, -1, dtype=np.int64)
    is_pivot_col = np.zeros(n, dtype=bool)
    row = 0
    while row < m:
        sub = np.abs(R[row:, :]).copy()
        sub[:, is_pivot_col] = -1.0
        flat = sub.T.ravel()  # column-major scan matches the loop kernel
        idx = int(np.argmax(flat))
        best = flat[idx]
        if best <= tol:
            break
        bj, off = divmod(idx, m - row)
        bi = row + off
        if bi != row:
            R[[row, bi], :] = R[[bi, row], :]
        p = R[row, bj]
        f = R[:, bj] / p
        f[row] = 0.0
        R -= np.outer(f, R[row, :])
        R[:, bj] = 0.0
        R[row, bj] = p
        is_pivot_col[bj] = True
        pivot_col_of_row[row] = bj
        row += 1

    v = np.zeros(n)
    free_cols = np.flatnonzero(~is_pivot_col)
    if free_cols.size == 0:
        return False, v
    free = free_cols[0]
    v[free] = 1.0
    rows = np.arange(row)
    pcs = pivot_col_of_row[:row]
    v[pcs] = -R[rows, free] / R[rows, pcs]
    return True, v


# ---------------------------------------------------------------------------
# iterative discrepancy rounding
# ---------------------------------------------------------------------------

def _bf_core_loop(M, x, c, use_c, n_features, snap, step_tol, rel_tol):
    """Round x in-place to {0,1} while preserving the live constraint rows.

    M holds one row per equality: row 0 is the sum row (never dropped),
    the remaining rows are feature-value indicator rows. Constraint rows
    are dropped by the counting rules; fractional entries move along
    nullspace directions of the live rows until they hit a bound.
    """
    m, n = M.shape
    active = np.empty(n, dtype=np.bool_)
    for j in range(n):
        if x[j] <= snap:
            x[j] = 0.0
            active[j] = False
        elif x[j] >= 1.0 - snap:
            x[j] = 1.0
            active[j] = False
        else:
            active[j] = True
    alive = np.ones(m, dtype=np.bool_)

    while True:
        n_act = 0
        for j in range(n):
            if active[j]:
                n_act += 1
        if n_act == 0:
            return BF_OK
        m_alive = 0
        for r in range(m):
            if alive[r]:
                m_alive += 1

        if m_alive < n_act:
            act_idx = np.empty(n_act, dtype=np.int64)
            t = 0
            for j in range(n):
                if active[j]:
                    act_idx[t] = j
                    t += 1
            A_act = np.empty((m_alive, n_act))
            rr = 0
            for r in range(m):
                if alive[r]:
                    for t in range(n_act):
                        A_act[rr, t] = M[r, act_idx[t]]
                    rr += 1
            found, v = _nullspace_loop(A_act, rel_tol)
            if not found:
                return BF_STUCK
            sigma = 0.0
            if use_c:
                s = 0.0
                for t in range(n_act):
                    s += c[act_idx[t]] * v[t]
                if s > 0.0:
                    sigma = 1.0
                elif s < 0.0:
                    sigma = -1.0
            if sigma == 0.0:
                for t in range(n_act):
                    if v[t] != 0.0:
                        sigma = 1.0 if v[t] > 0.0 else -1.0
                        break
            step = np.inf
            for t in range(n_act):
                d = sigma * v[t]
                xj = x[act_idx[t]]
                if d > 0.0:
                    cand = (1.0 - xj) / d
                elif d < 0.0:
                    cand = xj / (-d)
                else:
                    continue
                if cand < step:
                    step = cand
            if not np.isfinite(step) or step < step_tol:
                return BF_STALLED
            newly = 0
            for t in range(n_act):
                j = act_idx[t]
                x[j] += step * sigma * v[t]
                if x[j] <= snap:
                    x[j] = 0.0
                    active[j] = False
                    newly += 1
                elif x[j] >= 1.0 - snap:
                    x[j] = 1.0
                    active[j] = False
                    newly += 1
            if newly == 0:
                return BF_STALLED
        else:
            dropped = False
            for r in range(1, m):
                if not alive[r]:
                    continue
                cnt = 0
                for j in range(n):
                    if active[j] and M[r, j] != 0.0:
                        cnt += 1
                if cnt == n_act:
                    alive[r] = False
                    dropped = True
            if not dropped:
                for r in range(1, m):
                    if not alive[r]:
                        continue
                    cnt = 0
                    for j in range(n):
                        if active[j] and M[r, j] != 0.0:
                            cnt += 1
                    if cnt <= n_features:
                        alive[r] = False
                        dropped = True
            if not dropped:
                return BF_STUCK


def bf_core_numpy(M, x, c, use_c, n_features, snap, step_tol, rel_tol):
    """Vectorized twin of the rounding loop."""
    m, n = M.shape
    low = x <= snap
    high = x >= 1.0 - snap
    x[low] = 0.0
    x[high] = 1.0
    active = ~(low | high)
    alive = np.ones(m, dtype=bool)
    pair_rows = np.arange(1, m)

    while active.any():
        n_act = int(active.sum())
        m_alive = int(alive.sum())
        if m_alive < n_act:
            A_act = M[alive][:, active]
            found, v = nullspace_first_basis_numpy(A_act, rel_tol)
            if not found:
                return BF_STUCK
            sigma = 0.0
            if use_c:
                s = float(c[active] @ v)
                if s > 0.0:
                    sigma = 1.0
                elif s < 0.0:
                    sigma = -1.0
            if sigma == 0.0:
                nz = np.flatnonzero(v)
                sigma = 1.0 if v[nz[0]] > 0.0 else -1.0
            d = sigma * v
            xa = x[active]
            with np.errstate(divide="ignore"):
                up = np.where(d > 0.0, (1.0 - xa) / d, np.inf)
                down = np.where(d < 0.0, xa / (-d), np.inf)
            step = float(min(up.min(), down.min()))
            if not np.isfinite(step) or step < step_tol:
                return BF_STALLED
            xa = xa + step * d
            snap_low = xa <= snap
            snap_high = xa >= 1.0 - snap
            xa[snap_low] = 0.0
            xa[snap_high] = 1.0
            x[active] = xa
            newly = snap_low | snap_high
            if not newly.any():
                return BF_STALLED
            idx = np.flatnonzero(active)
            active[idx[newly]] = False
        else:
            live_pairs = pair_rows[alive[1:]]
            counts = (M[live_pairs][:, active] != 0.0).sum(axis=1)
            full = counts == n_act
            if full.any():
                alive[live_pairs[full]] = False
                continue
            small = counts <= n_features
            if small.any():
                alive[live_pairs[small]] = False
                continue
            return BF_STUCK
    return BF_OK


# ---------------------------------------------------------------------------
# contaminated-controls log-likelihood
# ---------------------------------------------------------------------------

def _mle_value_grad_loop(idx, z, w, contamination, theta, grad):
    """Objective and gradient of the participation log-likelihood.

    idx holds, per row, the positions of that row's set indicators
    (intercept plus one per feature); z is the pool label, w the row
    weight and ``contamination`` the constant qbar*|B|/|P|.
    """
    m, d = idx.shape
    for t in range(theta.shape[0]):
        grad[t] = 0.0
    val = 0.0
    for i in range(m):
        dot = 0.0
        for t in range(d):
            dot += theta[idx[i, t]]
        e = np.exp(dot)
        denom = contamination + e
        val += z[i] * dot - w[i] * np.log(denom)
        coef = z[i] - w[i] * e / denom
        for t in range(d):
            grad[idx[i, t]] += coef
    return val


def mle_value_grad_numpy(idx, z, w, contamination, theta, grad):
    """Vectorized twin of the likelihood kernel."""
    dots = theta[idx].sum(axis=1)
    e = np.exp(dots)
    denom = contamination + e
    val = float(z @ dots - w @ np.log(denom))
    coef = z - w * e / denom
    grad[:] = np.bincount(
        idx.ravel(), weights=np.repeat(coef, idx.shape[1]), minlength=theta.shape[0]
    )
    return val


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

if NUMBA_ENABLED:
    nullspace_first_basis_jit = njit(cache=True)(_nullspace_loop)

    # Rebind so the jitted rounding loop calls the jitted elimination.
    _nullspace_loop = nullspace_first_basis_jit
    bf_core_jit = njit(cache=True)(_bf_core_loop)
    mle_value_grad_jit = njit(cache=True)(_mle_value_grad_loop)

    nullspace_first_basis = nullspace_first_basis_jit
    bf_core = bf_core_jit
    mle_value_grad = mle_value_grad_jit
else:
    nullspace_first_basis = nullspace_first_basis_numpy
    bf_core = bf_core_numpy
    mle_value_grad = mle_value_grad_numpy
