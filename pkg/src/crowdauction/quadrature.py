"""Breadth-first adaptive Simpson quadrature over many integrals at once.

Integrands here are allocation curves: continuous but with kinks wherever
the set of capacity-bound workers changes, or piecewise constant in the
``k = inf`` limit. Refinement is driven by per-interval error estimates.
All intervals that still need work at a given depth are evaluated in one
vectorised integrand call, which is what makes payment computation cheap
enough for Monte Carlo use.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

Integrand = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass
class QuadResult:
    value: np.ndarray
    error: np.ndarray
    converged: np.ndarray
    evaluations: int


def integrate(
    f: Integrand,
    lo,
    hi,
    owner,
    n_problems: int,
    tol,
    max_depth: int = 20,
    open_ends: bool = False,
) -> QuadResult:
    """Integrate ``f`` over a partition of segments belonging to several problems.

    ``lo``, ``hi`` and ``owner`` describe the initial segments; segment
    ``j`` contributes to problem ``owner[j]``. ``f(owner_idx, s)`` must
    return integrand values for each pair. ``tol`` is the absolute error
    budget per problem, shared among intervals in proportion to length.
    Intervals still over budget at ``max_depth`` are accepted as they are;
    a problem counts as converged when its summed estimate is within ``tol``.

    With ``open_ends`` the initial segment endpoints are sampled a hair
    inside the segment, so jump discontinuities placed exactly on segment
    boundaries do not leak into the rule.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    owner = np.asarray(owner, dtype=int)
    tol = np.broadcast_to(np.asarray(tol, dtype=float), (n_problems,))
    value = np.zeros(n_problems)
    error = np.zeros(n_problems)
    keep = hi > lo
    lo, hi, owner = lo[keep], hi[keep], owner[keep]
    if lo.size == 0:
        return QuadResult(value, error, np.ones(n_problems, dtype=bool), 0)

    span = np.zeros(n_problems)
    np.add.at(span, owner, hi - lo)
    density = tol / np.where(span > 0, span, 1.0)

    a, b = lo, hi
    m = 0.5 * (a + b)
    if open_ends:
        eta = 1e-9 * (b - a)
        ends_a, ends_b = a + eta, b - eta
    else:
        ends_a, ends_b = a, b
    l, r = 0.5 * (a + m), 0.5 * (m + b)
    pts = np.concatenate([ends_a, ends_b, m, l, r])
    own = np.tile(owner, 5)
    vals = np.asarray(f(own, pts), dtype=float)
    evaluations = pts.size
    fa, fb, fm, fl, fr = np.split(vals, 5)

    for depth in range(max_depth + 1):
        h = b - a
        whole = h / 6.0 * (fa + 4.0 * fm + fb)
        halves = h / 12.0 * (fa + 4.0 * fl + 2.0 * fm + 4.0 * fr + fb)
        est = np.abs(halves - whole) / 15.0
        local_tol = density[owner] * h
        ok = est <= local_tol
        if depth == max_depth:
            ok = np.ones_like(ok)
        np.add.at(value, owner[ok], halves[ok] + (halves[ok] - whole[ok]) / 15.0)
        np.add.at(error, owner[ok], est[ok])
        split = ~ok
        if not split.any():
            break
        a, m_, b = a[split], m[split], b[split]
        fa, fl, fm, fr, fb = fa[split], fl[split], fm[split], fr[split], fb[split]
        owner = owner[split]
        # children [a, m] and [m, b]; their midpoints were the old quarter points
        new_a = np.concatenate([a, m_])
        new_b = np.concatenate([m_, b])
        new_m = 0.5 * (new_a + new_b)
        new_l = 0.5 * (new_a + new_m)
        new_r = 0.5 * (new_m + new_b)
        owner = np.concatenate([owner, owner])
        pts = np.concatenate([new_l, new_r])
        vals = np.asarray(f(np.tile(owner, 2), pts), dtype=float)
        evaluations += pts.size
        fl_new, fr_new = np.split(vals, 2)
        fa, fm, fb = (
            np.concatenate([fa, fm]),
            np.concatenate([fl, fr]),
            np.concatenate([fm, fb]),
        )
        fl, fr = fl_new, fr_new
        a, b, m = new_a, new_b, new_m
    converged = error <= tol
    return QuadResult(value, error, converged, evaluations)


def integrate_scalar(f: Callable[[float], float], a: float, b: float, tol: float = 1e-10, **kw):
    """Convenience wrapper for one scalar integrand. Returns ``(value, error)``."""
    fv = np.vectorize(f, otypes=[float])
    res = integrate(lambda _o, s: fv(s), [a], [b], [0], 1, tol, **kw)
    return float(res.value[0]), float(res.error[0])
