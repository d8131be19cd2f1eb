"""Numba kernel for log-domain Sinkhorn sweeps at a fixed regularization.

Each log-sum-exp is shifted by the current potential instead of a fresh
maximum, so a sweep needs one pass over the cost per side. A row or column
whose shifted sum under- or overflows is redone with the exact max shift.
"""

import math

import numpy as np
from numba import njit

_TINY = 1e-280
_HUGE = 1e280


@njit(cache=True, nogil=True)
def _row_lse(cost, g, i, inv):
    n1 = cost.shape[1]
    m = -np.inf
    for j in range(n1):
        v = g[j] - cost[i, j]
        if v > m:
            m = v
    s = 0.0
    for j in range(n1):
        s += math.exp((g[j] - cost[i, j] - m) * inv)
    return m * inv + math.log(s)


@njit(cache=True, nogil=True)
def _col_lse(cost, f, j, inv):
    n0 = cost.shape[0]
    m = -np.inf
    for i in range(n0):
        v = f[i] - cost[i, j]
        if v > m:
            m = v
    s = 0.0
    for i in range(n0):
        s += math.exp((f[i] - cost[i, j] - m) * inv)
    return m * inv + math.log(s)


@njit(cache=True, nogil=True)
def _row_update(cost, g, eps, log_a, f):
    n0, n1 = cost.shape
    inv = 1.0 / eps
    for i in range(n0):
        shift = f[i]
        s = 0.0
        for j in range(n1):
            s += math.exp((g[j] - cost[i, j] + shift) * inv)
        if _TINY < s < _HUGE:
            f[i] = eps * log_a[i] - eps * math.log(s) + shift
        else:
            f[i] = eps * (log_a[i] - _row_lse(cost, g, i, inv))


@njit(cache=True, nogil=True)
def _col_update(cost, f, eps, log_b, g, colsum, exact, threshold):
    """Update ``g`` from the current column sums unless the L1 column
    violation is at most ``threshold``. Returns the violation."""
    n0, n1 = cost.shape
    inv = 1.0 / eps
    for j in range(n1):
        colsum[j] = 0.0
    for i in range(n0):
        fi = f[i]
        for j in range(n1):
            colsum[j] += math.exp((fi - cost[i, j] + g[j]) * inv)
    b = math.exp(log_b[0])
    err = 0.0
    for j in range(n1):
        s = colsum[j]
        if _TINY < s < _HUGE:
            exact[j] = np.nan
            err += abs(s - b)
        else:
            lse = _col_lse(cost, f, j, inv)
            exact[j] = lse
            z = lse + g[j] * inv
            err += abs(math.exp(z) - b) if z < 600.0 else _HUGE
    if err > threshold:
        for j in range(n1):
            if math.isnan(exact[j]):
                g[j] = eps * log_b[j] - eps * math.log(colsum[j]) + g[j]
            else:
                g[j] = eps * (log_b[j] - exact[j])
    return err


@njit(cache=True, nogil=True)
def sweeps(cost, f, g, eps, log_a, log_b, tol, budget, check_every):
    """Alternate row and column updates in place.

    Stops when, right after a row update, the L1 column violation is at
    most ``tol`` (rows are exact then), or after ``budget`` sweeps.
    Returns ``(sweeps, violation)``.
    """
    n1 = cost.shape[1]
    colsum = np.empty(n1)
    exact = np.empty(n1)
    err = np.inf
    used = 0
    while used < budget:
        _row_update(cost, g, eps, log_a, f)
        used += 1
        check = used % check_every == 0 or used == budget
        err = _col_update(cost, f, eps, log_b, g, colsum, exact, tol if check else -1.0)
        if check and (not math.isfinite(err) or err <= tol):
            break
    return used, err
