"""Work allocation: minimise ``sum_i delta_i**k * x_i**2`` subject to
``sum_i x_i = c`` and ``0 <= x_i <= cap_i``.

``k`` trades equality (``k = 0`` splits work evenly) against cost
efficiency (``k -> inf`` hands work to the lowest virtual welfare first).
The finite-``k`` solver is the iterative tight-set method: solve the
equality-constrained closed form, pin every worker that overshoots its
capacity, repeat. ``K_INF`` selects the greedy limit directly.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, InfeasibleError, SizeError

#: relative slack allowed when ``c`` exceeds total capacity through rounding
CAPACITY_SLACK = 1e-9
#: largest ``n`` the exhaustive oracle accepts
ORACLE_MAX_N = 16


class KInf(enum.Enum):
    """Marker for the ``k = inf`` (cost-minimising) allocation."""

    INF = "inf"

    def __repr__(self) -> str:
        return "K_INF"

    def __str__(self) -> str:
        return "inf"


K_INF = KInf.INF


def parse_k(value) -> float | KInf:
    """Normalise user input (``"inf"``, ``math.inf``, numbers) to a k value."""
    if value is K_INF:
        return K_INF
    if isinstance(value, str):
        if value.strip().lower() in ("inf", "infinity", "∞"):
            return K_INF
        value = float(value)
    value = float(value)
    if math.isinf(value) and value > 0:
        return K_INF
    if not value >= 0:
        raise DomainError(f"k must be non-negative, got {value}")
    return value


def k_label(k: float | KInf) -> str:
    return "inf" if k is K_INF else repr(float(k))


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=float, ndmin=1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class AuctionInstance:
    """One auction round as seen by the allocation rule.

    ``delta`` is the virtual welfare of each bid. Build from raw bids with
    :meth:`from_bids`, which evaluates ``delta`` under a bid prior.
    """

    bids: np.ndarray
    capacities: np.ndarray
    delta: np.ndarray
    k: float | KInf
    c: float

    def __post_init__(self) -> None:
        bids, caps, delta = (_frozen(v) for v in (self.bids, self.capacities, self.delta))
        object.__setattr__(self, "bids", bids)
        object.__setattr__(self, "capacities", caps)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "k", parse_k(self.k))
        if not (bids.shape == caps.shape == delta.shape) or bids.ndim != 1 or bids.size < 1:
            raise DomainError("bids, capacities and delta must be equal-length, non-empty")
        if np.any(~np.isfinite(delta)) or np.any(delta <= 0):
            raise DomainError("virtual welfare must be positive for every worker")
        if np.any(~(bids > 0)):
            raise DomainError("bids must be positive")
        if np.any(~(caps > 0)) or np.any(~np.isfinite(caps)):
            raise DomainError("capacities must be positive and finite")
        c = float(self.c)
        if not c >= 0:
            raise DomainError(f"total work c must be non-negative, got {c}")
        total = float(caps.sum())
        if c > total:
            if c - total > CAPACITY_SLACK * total:
                raise InfeasibleError(
                    f"total work c={c!r} exceeds total capacity {total!r}"
                )
            c = total
        object.__setattr__(self, "c", c)

    @classmethod
    def from_bids(cls, bids, capacities, k, c, dist) -> "AuctionInstance":
        bids = np.array(bids, dtype=float, ndmin=1)
        return cls(bids, capacities, dist.virtual_welfare(bids), k, c)

    @property
    def n(self) -> int:
        return self.bids.size

    def replace_worker(self, i: int, *, bid=None, capacity=None, delta=None) -> "AuctionInstance":
        """Copy with worker ``i``'s report swapped out."""
        bids, caps, d = self.bids.copy(), self.capacities.copy(), self.delta.copy()
        if bid is not None:
            bids[i] = bid
        if capacity is not None:
            caps[i] = capacity
        if delta is not None:
            d[i] = delta
        return AuctionInstance(bids, caps, d, self.k, self.c)

    def with_k(self, k) -> "AuctionInstance":
        return AuctionInstance(self.bids, self.capacities, self.delta, k, self.c)


@dataclass(frozen=True)
class AllocationResult:
    """Solution of one allocation problem.

    ``lam`` and ``mu`` use the scaling in which a non-tight worker gets
    ``x_i = mu * delta_i**-k`` and a tight one has
    ``lam_i = mu - delta_i**k * cap_i``. For ``K_INF`` they are the dual
    variables of the linear cost program instead (``mu`` is the marginal
    virtual welfare, ``lam_i = mu - delta_i``) and ``objective`` is
    ``sum_i delta_i * x_i``.
    """

    x: np.ndarray
    tight_set: tuple[int, ...]
    lam: np.ndarray
    mu: float
    objective: float
    iterations: int
    k: float | KInf = field(default=0.0)

    @property
    def tight_mask(self) -> np.ndarray:
        mask = np.zeros(self.x.size, dtype=bool)
        mask[list(self.tight_set)] = True
        return mask


# ---------------------------------------------------------------------------
# batched kernels (rows are independent problems sharing c)


def _tight_set_rows(log_delta: np.ndarray, caps: np.ndarray, c, k: float):
    """Iterative tight-set method applied to every row at once.

    Returns ``(x, tight, iterations)``. Every violated constraint is added
    in the same pass.
    """
    m, n = log_delta.shape
    c = np.broadcast_to(np.asarray(c, dtype=float), (m,))
    logw = -k * log_delta
    tight = np.zeros((m, n), dtype=bool)
    done = np.zeros(m, dtype=bool)
    iters = np.zeros(m, dtype=int)
    x = np.empty((m, n))
    with np.errstate(invalid="ignore", divide="ignore"):
        for it in range(1, n + 1):
            all_tight = tight.all(axis=1)
            lw = np.where(tight, -np.inf, logw)
            top = lw.max(axis=1, keepdims=True)
            top[all_tight] = 0.0
            w = np.exp(lw - top)
            cprime = c - np.where(tight, caps, 0.0).sum(axis=1)
            share = cprime[:, None] * w / w.sum(axis=1, keepdims=True)
            x = np.where(tight, caps, share)
            viol = (x > caps) & ~tight
            finished = ~done & ~viol.any(axis=1)
            iters[finished] = it
            done |= finished
            if done.all():
                break
            tight |= viol
    if not done.all():
        # only reachable when c equals total capacity up to rounding
        stuck = ~done
        x[stuck] = caps[stuck]
        tight[stuck] = True
        iters[stuck] = n
    np.maximum(x, 0.0, out=x)
    return x, tight, iters


def _water_fill_equal(caps: np.ndarray, amount: float) -> np.ndarray:
    """Split ``amount`` equally, capping workers and redistributing the excess."""
    out = np.zeros(caps.size)
    order = np.argsort(caps, kind="stable")
    left = amount
    for pos, j in enumerate(order):
        share = left / (caps.size - pos)
        out[j] = min(caps[j], share)
        left -= out[j]
    return out


def _greedy_one(delta: np.ndarray, caps: np.ndarray, c: float):
    """Fill in ascending ``delta``; equal-``delta`` groups share the marginal work."""
    x = np.zeros(delta.size)
    remaining = c
    marginal = None
    groups = 0
    for value in np.unique(delta):
        if remaining <= 0:
            break
        groups += 1
        g = np.flatnonzero(delta == value)
        cap_g = caps[g].sum()
        if cap_g <= remaining:
            x[g] = caps[g]
            remaining -= cap_g
            marginal = value
        else:
            x[g] = _water_fill_equal(caps[g], remaining)
            remaining = 0.0
            marginal = value
    return x, (float(delta.min()) if marginal is None else float(marginal)), max(groups, 1)


def _greedy_rows(delta: np.ndarray, caps: np.ndarray, c) -> np.ndarray:
    m, n = delta.shape
    c = np.broadcast_to(np.asarray(c, dtype=float), (m,))
    order = np.argsort(delta, axis=1, kind="stable")
    d_sorted = np.take_along_axis(delta, order, axis=1)
    cap_sorted = np.take_along_axis(caps, order, axis=1)
    before = np.cumsum(cap_sorted, axis=1) - cap_sorted
    x_sorted = np.clip(c[:, None] - before, 0.0, cap_sorted)
    x = np.empty_like(x_sorted)
    np.put_along_axis(x, order, x_sorted, axis=1)
    ties = np.flatnonzero((np.diff(d_sorted, axis=1) == 0).any(axis=1))
    for r in ties:
        x[r] = _greedy_one(delta[r], caps[r], c[r])[0]
    return x


def solve_rows(delta: np.ndarray, caps: np.ndarray, c, k) -> np.ndarray:
    """Allocations for a stack of problems (one per row of ``delta``)."""
    delta = np.asarray(delta, dtype=float)
    caps = np.broadcast_to(np.asarray(caps, dtype=float), delta.shape)
    if parse_k(k) is K_INF:
        return _greedy_rows(delta, caps, c)
    n = delta.shape[1]
    if n == 1:
        return np.broadcast_to(np.asarray(c, dtype=float), (delta.shape[0],))[:, None].copy()
    return _tight_set_rows(np.log(delta), caps, c, float(k))[0]


# ---------------------------------------------------------------------------
# single-instance entry points


def allocate(inst: AuctionInstance) -> AllocationResult:
    """Unique minimiser of the allocation program for finite ``k``."""
    if inst.k is K_INF:
        raise DomainError("allocate() needs finite k; use allocate_limit_k_inf or solve")
    k = float(inst.k)
    n = inst.n
    caps = inst.capacities
    log_delta = np.log(inst.delta)
    if n == 1:
        x = np.array([inst.c])
        tight = (0,) if inst.c == caps[0] else ()
        mu = inst.c * inst.delta[0] ** k
        return AllocationResult(
            x, tight, np.zeros(1), float(mu), float(inst.delta[0] ** k * inst.c**2), 1, k
        )
    total = float(caps.sum())
    if inst.c >= total:
        x = caps.copy()
        tight_mask = np.ones(n, dtype=bool)
        iters = 1
    else:
        xs, tights, its = _tight_set_rows(log_delta[None, :], caps[None, :], inst.c, k)
        x, tight_mask, iters = xs[0], tights[0], int(its[0])
    with np.errstate(over="ignore", invalid="ignore"):
        log_gamma = k * log_delta + np.log(caps)
        if tight_mask.all():
            mu = float(np.exp(log_gamma.max()))
        else:
            cprime = inst.c - caps[tight_mask].sum()
            mu = 0.0
            if cprime > 0:
                lw = -k * log_delta[~tight_mask]
                top = lw.max()
                mu = float(np.exp(math.log(cprime) - top - math.log(np.exp(lw - top).sum())))
        lam = np.where(tight_mask, mu - np.exp(log_gamma), 0.0)
        objective = float(np.sum(np.exp(k * log_delta) * x * x))
    return AllocationResult(
        x, tuple(int(i) for i in np.flatnonzero(tight_mask)), lam, mu, objective, iters, k
    )


def allocate_limit_k_inf(inst: AuctionInstance) -> AllocationResult:
    """Cost-minimising allocation: fill workers in ascending virtual welfare."""
    x, mu, groups = _greedy_one(inst.delta, inst.capacities, inst.c)
    tight_mask = np.isclose(x, inst.capacities, rtol=0, atol=1e-12 * max(1.0, inst.c))
    lam = np.where(tight_mask, np.maximum(mu - inst.delta, 0.0), 0.0)
    return AllocationResult(
        x,
        tuple(int(i) for i in np.flatnonzero(tight_mask)),
        lam,
        mu,
        float(np.dot(inst.delta, x)),
        groups,
        K_INF,
    )


def solve(inst: AuctionInstance) -> AllocationResult:
    """Dispatch on ``inst.k``: finite k to :func:`allocate`, else the greedy limit."""
    return allocate_limit_k_inf(inst) if inst.k is K_INF else allocate(inst)


def oracle_allocate(inst: AuctionInstance) -> AllocationResult:
    """Exhaustive check: try every candidate tight set, keep the best KKT point.

    Independent of :func:`allocate`; intended for verification with small
    ``n``.
    """
    if inst.k is K_INF:
        raise DomainError("oracle_allocate needs finite k")
    n = inst.n
    if n > ORACLE_MAX_N:
        raise SizeError(f"oracle is exhaustive; n={n} exceeds {ORACLE_MAX_N}")
    k = float(inst.k)
    caps = inst.capacities
    weight = inst.delta**k
    inv_weight = inst.delta ** (-k)
    gamma = weight * caps
    masks = ((np.arange(2**n)[:, None] >> np.arange(n)) & 1).astype(bool)
    cprime = inst.c - (masks * caps).sum(axis=1)
    free_inv = np.where(masks, 0.0, inv_weight).sum(axis=1)
    scale = max(1.0, inst.c)
    tol = 1e-10 * scale
    with np.errstate(divide="ignore", invalid="ignore"):
        mu = np.where(free_inv > 0, cprime / free_inv, gamma.max())
    x = np.where(masks, caps, mu[:, None] * inv_weight)
    feasible = (
        (x >= -tol).all(axis=1)
        & (x <= caps + tol).all(axis=1)
        & np.where(masks, mu[:, None] - gamma >= -1e-10 * np.maximum(1.0, gamma), True).all(axis=1)
        & ((free_inv > 0) | (np.abs(cprime) <= tol))
    )
    if not feasible.any():
        raise InfeasibleError("no candidate tight set satisfies the KKT conditions")
    objective = np.where(feasible, (weight * x * x).sum(axis=1), np.inf)
    # degenerate optima (a free worker landing exactly on its cap) tie with
    # the candidate that pins it; report the larger tight set
    lowest = objective.min()
    ties = np.flatnonzero(objective <= lowest + 1e-12 * max(1.0, abs(lowest)))
    best = int(ties[np.argmax(masks[ties].sum(axis=1))])
    tight_mask = masks[best]
    lam = np.where(tight_mask, mu[best] - gamma, 0.0)
    return AllocationResult(
        x[best].copy(),
        tuple(int(i) for i in np.flatnonzero(tight_mask)),
        lam,
        float(mu[best]),
        float(objective[best]),
        int(2**n),
        k,
    )


def allocation_curve(inst: AuctionInstance, i: int, grid, dist) -> np.ndarray:
    """``x_i`` as worker ``i``'s bid sweeps ``grid`` (others held fixed)."""
    s = np.asarray(grid, dtype=float)
    delta = np.tile(inst.delta, (s.size, 1))
    delta[:, i] = dist.virtual_welfare(s)
    return solve_rows(delta, inst.capacities, inst.c, inst.k)[:, i]


def total_virtual_cost(inst: AuctionInstance, result: AllocationResult) -> float:
    """``sum_i x_i * delta_i``: the requester's expected cost for this allocation."""
    return float(np.dot(result.x, inst.delta))


def sort_keys(inst: AuctionInstance) -> np.ndarray:
    """``delta_i**k * cap_i``; tight workers always form a prefix in this order."""
    if inst.k is K_INF:
        return inst.delta.copy()
    return np.exp(float(inst.k) * np.log(inst.delta) + np.log(inst.capacities))
