"""Hot numerical kernels with a numba fast path and a pure-numpy fallback.

The backend is chosen once at import time from the environment variable
``GRUSHIN_LAB_BACKEND`` (``"numba"`` or ``"numpy"``).  Default is numba when
importable.  ``benchmarks/bench_kernels.py`` times the two paths against each
other.

The only kernel that genuinely needs a compiled inner loop is the
Gauss-Seidel sweep of the upwind eikonal solver: its updates are sequential
by construction.  The numpy fallback replaces the sweep by damped Jacobi
iterations of the same local update, which converges to the same fixed
point, only in more passes.
"""

from __future__ import annotations

import os

import numpy as np

_BACKEND = os.environ.get("GRUSHIN_LAB_BACKEND", "").strip().lower()
if _BACKEND not in ("numba", "numpy", ""):
    raise ValueError(
        f"GRUSHIN_LAB_BACKEND must be 'numba' or 'numpy', got {_BACKEND!r}"
    )

if _BACKEND != "numpy":
    try:
        from numba import njit

        NUMBA_ENABLED = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        if _BACKEND == "numba":
            raise
        NUMBA_ENABLED = False
else:
    NUMBA_ENABLED = False

if not NUMBA_ENABLED:  # pragma: no cover - exercised via env flag in the bench
    def njit(*args, **kwargs):
        def wrap(func):
            return func

        if len(args) == 1 and callable(args[0]):
            return args[0]
        return wrap


INF = 1e30


def backend_name() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"


# ---------------------------------------------------------------------------
# Local eikonal update
#
# At each node the Godunov upwind discretisation of
#     sum_d w_d * ((U - a_d)_+ / h_d)^2 = 1
# is solved for U, where a_d is the smaller of the two axis-d neighbour
# values and w_d is the squared metric speed along axis d (1 on x-axes,
# |x|^{2*alpha} on y-axes).  Axes with w_d = 0 drop out: motion along them
# carries no information at that node.
# ---------------------------------------------------------------------------


@njit(cache=True)
def _sweep_pass(values, order, nbr, coef):
    """One Gauss-Seidel pass over ``order``; returns the max update."""
    n_axes = nbr.shape[1]
    a = np.empty(n_axes)
    c = np.empty(n_axes)
    max_change = 0.0
    for oi in range(order.shape[0]):
        i = order[oi]
        old = values[i]
        if old == 0.0:
            continue  # source node stays fixed
        m = 0
        for d in range(n_axes):
            cd = coef[i, d]
            if cd <= 0.0:
                continue
            lo = nbr[i, d, 0]
            hi = nbr[i, d, 1]
            v = INF
            if lo >= 0 and values[lo] < v:
                v = values[lo]
            if hi >= 0 and values[hi] < v:
                v = values[hi]
            if v >= INF:
                continue
            a[m] = v
            c[m] = cd
            m += 1
        if m == 0:
            continue
        # insertion sort of the (a, c) pairs by a; m is at most a few axes
        for p in range(1, m):
            av = a[p]
            cv = c[p]
            q = p - 1
            while q >= 0 and a[q] > av:
                a[q + 1] = a[q]
                c[q + 1] = c[q]
                q -= 1
            a[q + 1] = av
            c[q + 1] = cv
        # include neighbours in ascending order until the candidate fits
        sc = 0.0
        sca = 0.0
        sca2 = 0.0
        new = INF
        for j in range(m):
            sc += c[j]
            sca += c[j] * a[j]
            sca2 += c[j] * a[j] * a[j]
            disc = sca * sca - sc * (sca2 - 1.0)
            if disc < 0.0:
                disc = 0.0
            cand = (sca + np.sqrt(disc)) / sc
            if j == m - 1 or cand <= a[j + 1]:
                new = cand
                break
        if new < old:
            change = old - new
            if change > max_change:
                max_change = change
            values[i] = new
    return max_change


def _jacobi_pass(values, nbr_lo, nbr_hi, coef, frozen):
    """Vectorised Jacobi version of the local update (numpy fallback)."""
    n_axes = coef.shape[1]
    padded = np.concatenate([values, [INF]])
    a = np.minimum(padded[nbr_lo], padded[nbr_hi])  # (N, n_axes)
    c = np.where(coef > 0.0, coef, 0.0)
    a = np.where(c > 0.0, a, INF)
    ordi = np.argsort(a, axis=1)
    a_s = np.take_along_axis(a, ordi, axis=1)
    c_s = np.take_along_axis(c, ordi, axis=1)
    sc = np.cumsum(c_s, axis=1)
    sca = np.cumsum(c_s * a_s, axis=1)
    sca2 = np.cumsum(c_s * a_s * a_s, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        disc = np.maximum(sca**2 - sc * (sca2 - 1.0), 0.0)
        cand = (sca + np.sqrt(disc)) / sc
    cand = np.where((sc > 0.0) & (a_s < INF), cand, INF)
    # the viscosity update is the candidate at the FIRST admissible level:
    # including a neighbour whose value exceeds the candidate undershoots
    nxt = np.concatenate([a_s[:, 1:], np.full((a_s.shape[0], 1), INF)], axis=1)
    valid = cand <= nxt
    first = np.argmax(valid, axis=1)
    best = np.take_along_axis(cand, first[:, None], axis=1)[:, 0]
    best = np.where(valid.any(axis=1), best, INF)
    new = np.minimum(values, best)
    new[frozen] = values[frozen]
    change = float(np.max(values - new))
    values[:] = new
    return change


def solve_eikonal(values, orders, nbr, coef, tol=1e-10, max_rounds=500):
    """Drive the solver to a fixed point; returns (rounds, residual).

    ``values`` is modified in place: INF everywhere except 0 at sources.
    ``orders`` is the list of sweep orderings (numba path); the numpy path
    ignores it and runs Jacobi passes.
    """
    if NUMBA_ENABLED:
        rounds = 0
        resid = INF
        while rounds < max_rounds:
            resid = 0.0
            for order in orders:
                change = _sweep_pass(values, order, nbr, coef)
                if change > resid:
                    resid = change
            rounds += 1
            if resid < tol:
                break
        return rounds, resid
    nbr_lo = np.where(nbr[:, :, 0] >= 0, nbr[:, :, 0], values.shape[0])
    nbr_hi = np.where(nbr[:, :, 1] >= 0, nbr[:, :, 1], values.shape[0])
    frozen = values == 0.0
    # Jacobi needs on the order of one pass per cell across the domain
    max_iters = max_rounds * max(len(orders), 1) * 8
    iters = 0
    resid = INF
    while iters < max_iters:
        resid = _jacobi_pass(values, nbr_lo, nbr_hi, coef, frozen)
        iters += 1
        if resid < tol:
            break
    return iters, resid
