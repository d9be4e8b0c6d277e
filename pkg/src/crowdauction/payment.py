"""Maximum-payment rule and quality-scaled realised pay.

A worker bidding ``b_i`` is promised

    p_i = b_i * x_i(b_i) + integral_{b_i}^{upper} x_i(s) ds

where ``x_i(s)`` re-solves the allocation with worker ``i`` bidding ``s``
and everyone else held fixed. The integral (the worker's information rent)
is evaluated numerically on the allocation curve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .allocation import K_INF, AuctionInstance, parse_k, solve_rows
from .distributions import BidDistribution
from .errors import DomainError, InfeasibleError, PrecisionError
from .quadrature import integrate

#: target relative accuracy of the information-rent integral
DEFAULT_RTOL = 1e-10
#: a payment whose error estimate exceeds this (relative to max(1, p)) is rejected
MAX_REL_ERROR = 1e-6
MAX_DEPTH = 20
# initial equal pieces for smooth (finite k) allocation curves
_INITIAL_PIECES = 4


@dataclass(frozen=True)
class PaymentSchedule:
    """Per-worker maximum promised pay with quadrature error estimates."""

    p: np.ndarray
    error: np.ndarray
    x: np.ndarray


def _segments(inst: AuctionInstance, upper: float, workers: np.ndarray):
    lo, hi, owner = [], [], []
    for j, i in enumerate(workers):
        a = inst.bids[i]
        if a >= upper:
            continue
        if inst.k is K_INF:
            # greedy allocation only changes where worker i's bid crosses another bid
            others = np.delete(inst.bids, i)
            cuts = np.unique(others[(others > a) & (others < upper)])
            edges = np.concatenate([[a], cuts, [upper]])
        else:
            edges = np.linspace(a, upper, _INITIAL_PIECES + 1)
        lo.append(edges[:-1])
        hi.append(edges[1:])
        owner.append(np.full(edges.size - 1, j))
    if not lo:
        return np.empty(0), np.empty(0), np.empty(0, dtype=int)
    return np.concatenate(lo), np.concatenate(hi), np.concatenate(owner)


def max_payments(
    inst: AuctionInstance,
    dist: BidDistribution,
    workers=None,
    rtol: float = DEFAULT_RTOL,
) -> PaymentSchedule:
    """Maximum payments for the selected ``workers`` (default: everyone).

    All information-rent integrals are refined together. Raises
    :class:`PrecisionError` if any error estimate stays above
    ``MAX_REL_ERROR * max(1, p_i)``.
    """
    workers = np.arange(inst.n) if workers is None else np.atleast_1d(np.asarray(workers, dtype=int))
    upper = dist.upper
    bids = inst.bids[workers]
    if np.any(bids > upper):
        raise DomainError(f"bids above the maximum possible bid {upper}")
    x_all = solve_rows(inst.delta[None, :], inst.capacities, inst.c, inst.k)[0]
    x_own = x_all[workers]

    def curve(owner: np.ndarray, s: np.ndarray) -> np.ndarray:
        cols = workers[owner]
        rows = np.arange(s.size)
        delta = np.tile(inst.delta, (s.size, 1))
        delta[rows, cols] = dist.virtual_welfare(s)
        return solve_rows(delta, inst.capacities, inst.c, inst.k)[rows, cols]

    lo, hi, owner = _segments(inst, upper, workers)
    # p_i <= upper * x_i(b_i) because the allocation curve is non-increasing
    tol = rtol * np.maximum(1.0, upper * x_own)
    res = integrate(
        curve, lo, hi, owner, workers.size, tol,
        max_depth=MAX_DEPTH, open_ends=inst.k is K_INF,
    )
    p = bids * x_own + res.value
    bad = res.error > MAX_REL_ERROR * np.maximum(1.0, np.abs(p))
    if np.any(bad):
        raise PrecisionError(
            f"payment quadrature did not converge for workers {workers[bad].tolist()}"
        )
    return PaymentSchedule(p, res.error, x_own)


def compute_max_payment(
    inst: AuctionInstance, dist: BidDistribution, i: int, rtol: float = DEFAULT_RTOL
) -> float:
    """Maximum promised pay of worker ``i``."""
    return float(max_payments(inst, dist, [i], rtol).p[0])


def payment_schedule(
    inst: AuctionInstance, dist: BidDistribution, rtol: float = DEFAULT_RTOL
) -> PaymentSchedule:
    return max_payments(inst, dist, None, rtol)


def realized_payment(p: float, x: float, x_accepted: float) -> float:
    """Pay after quality assessment: ``p * x_accepted / x`` (0 when ``x`` is 0)."""
    if x_accepted < 0 or x_accepted > x * (1 + 1e-12) + 1e-15:
        raise DomainError(f"accepted work {x_accepted} must lie in [0, x={x}]")
    if x == 0:
        return 0.0
    return p * x_accepted / x


def variant_payments(
    own_bids,
    own_capacities,
    other_bids,
    other_capacities,
    k,
    c,
    dist: BidDistribution,
    rtol: float = DEFAULT_RTOL,
) -> PaymentSchedule:
    """Payments of one worker under many alternative settings, in one pass.

    Variant ``j`` places the worker at index 0 with bid ``own_bids[j]`` and
    declared capacity ``own_capacities[j]``. The competitors' bids and
    capacities are either shared (1-D arrays) or given per variant (2-D
    arrays with one row per variant); ``c`` may also vary per variant.
    Best-response searches move one worker's report against fixed
    competitors; Monte Carlo probes keep the worker fixed and redraw the
    competitors.
    """
    own_bids = np.atleast_1d(np.asarray(own_bids, dtype=float))
    m = own_bids.size
    own_caps = np.broadcast_to(np.asarray(own_capacities, dtype=float), (m,))
    other_bids = np.asarray(other_bids, dtype=float)
    n_other = other_bids.shape[-1]
    other_bids = np.broadcast_to(other_bids, (m, n_other))
    upper = dist.upper
    if np.any(own_bids > upper):
        raise DomainError(f"bids above the maximum possible bid {upper}")
    other_delta = np.broadcast_to(
        np.asarray(dist.virtual_welfare(other_bids), dtype=float), (m, n_other)
    )
    caps = np.empty((m, n_other + 1))
    caps[:, 0] = own_caps
    caps[:, 1:] = other_capacities
    c = np.broadcast_to(np.asarray(c, dtype=float), (m,))
    total = caps.sum(axis=1)
    if np.any(c - total > 1e-9 * total):
        raise InfeasibleError("total declared capacity is below c")
    c = np.minimum(c, total)
    k = parse_k(k)

    def solve_own(rows: np.ndarray, s: np.ndarray) -> np.ndarray:
        delta = np.empty((s.size, n_other + 1))
        delta[:, 0] = dist.virtual_welfare(s)
        delta[:, 1:] = other_delta[rows]
        return solve_rows(delta, caps[rows], c[rows], k)[:, 0]

    x_own = solve_own(np.arange(m), own_bids)
    lo, hi, owner = [], [], []
    for j, a in enumerate(own_bids):
        if a >= upper:
            continue
        if k is K_INF:
            row = other_bids[j]
            cuts = np.unique(row[(row > a) & (row < upper)])
            edges = np.concatenate([[a], cuts, [upper]])
        else:
            edges = np.linspace(a, upper, _INITIAL_PIECES + 1)
        lo.append(edges[:-1])
        hi.append(edges[1:])
        owner.append(np.full(edges.size - 1, j))
    tol = rtol * np.maximum(1.0, upper * x_own)
    if lo:
        res = integrate(
            solve_own, np.concatenate(lo), np.concatenate(hi), np.concatenate(owner), m, tol,
            max_depth=MAX_DEPTH, open_ends=k is K_INF,
        )
        value, error = res.value, res.error
    else:
        value, error = np.zeros(m), np.zeros(m)
    p = own_bids * x_own + value
    bad = error > MAX_REL_ERROR * np.maximum(1.0, np.abs(p))
    if np.any(bad):
        raise PrecisionError(
            f"payment quadrature did not converge for variants {np.flatnonzero(bad).tolist()}"
        )
    return PaymentSchedule(p, error, x_own)
