"""Reference solvers shared by the unit and acceptance suites."""

import itertools

import numpy as np

from panofuse.depthfusion import PiecewiseLinearMap, _hat_design


def exhaustive_bounded_ls(B, y, lb):
    """Exact bounded LS by enumerating active sets (reference oracle).

    Minimizes ||B p - y||^2 with p[j] >= lb[j] (lb[0] = -inf keeps p[0] free).
    """
    n = B.shape[1]
    bounded = [j for j in range(n) if np.isfinite(lb[j])]
    best, best_obj = None, np.inf
    for r in range(len(bounded) + 1):
        for S in itertools.combinations(bounded, r):
            free = [j for j in range(n) if j not in S]
            p = np.array(lb, dtype=float)
            p[np.isneginf(lb)] = 0.0
            rhs = y - B[:, list(S)] @ p[list(S)] if S else y.copy()
            sol, *_ = np.linalg.lstsq(B[:, free], rhs, rcond=None)
            full = np.empty(n)
            for j, v in zip(free, sol):
                full[j] = v
            for j in S:
                full[j] = lb[j]
            if all(full[j] >= lb[j] - 1e-10 for j in bounded):
                obj = float(np.sum((B @ full - y) ** 2))
                if obj < best_obj - 1e-15:
                    best_obj, best = obj, full
    return best, best_obj


def reference_fit(x, y, segments, min_slope):
    """Constrained piecewise-linear LS via the exhaustive bounded-LS oracle."""
    knots = np.linspace(x.min(), x.max(), segments + 1)
    A = _hat_design(np.asarray(x, float), knots)
    K = segments
    B = np.empty((x.size, K + 1))
    B[:, 0] = 1.0
    for j in range(1, K + 1):
        B[:, j] = A[:, j:].sum(axis=1)
    lb = np.concatenate(([-np.inf], min_slope * np.diff(knots)))
    p, obj = exhaustive_bounded_ls(B, y, lb)
    v = p[0] + np.concatenate(([0.0], np.cumsum(p[1:])))
    return PiecewiseLinearMap.from_knot_values(knots, v), obj
