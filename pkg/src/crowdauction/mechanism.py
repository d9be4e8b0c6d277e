"""The two-stage auction round.

Stage 1 collects ``(bid, declared capacity)`` pairs and fixes each worker's
expected work ``x_i`` and maximum pay ``p_i``. Stage 2 collects submitted
work, measures the acceptable fraction on at most ``x_i`` units, and pays
``p_i * accepted / x_i``.
"""

from __future__ import annotations

import functools
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .allocation import AllocationResult, AuctionInstance, solve, solve_rows
from .distributions import BidDistribution
from .errors import ConfigurationError, ContractWarning, DomainError
from .payment import DEFAULT_RTOL, PaymentSchedule, payment_schedule, variant_payments

Omega = Callable[[float, float], float]


@dataclass(frozen=True)
class WorkerProfile:
    """A worker's private values."""

    v: float
    x_max: float
    beta: float
    indirect_cost: float = 0.0

    def __post_init__(self) -> None:
        if not self.v > 0 or not self.x_max > 0:
            raise DomainError("unit cost and capacity must be positive")
        if not 0 < self.beta <= 1:
            raise DomainError("beta must lie in (0, 1]")
        if self.indirect_cost < 0:
            raise DomainError("indirect cost must be non-negative")

    @property
    def truthful_bid(self) -> float:
        return self.v / self.beta


@dataclass(frozen=True)
class WorkSubmission:
    x_hat: float
    alpha: float = 1.0

    def __post_init__(self) -> None:
        if self.x_hat < 0:
            raise DomainError("submitted work must be non-negative")
        if not 0 <= self.alpha <= 1:
            raise DomainError("acceptable fraction must lie in [0, 1]")

    def accepted(self, x: float) -> float:
        """Acceptable units: only ``min(x, x_hat)`` units are ever assessed."""
        return self.alpha * min(x, self.x_hat)


@dataclass(frozen=True)
class Stage1Result:
    instance: AuctionInstance
    allocation: AllocationResult
    payments: PaymentSchedule

    @property
    def x(self) -> np.ndarray:
        return self.allocation.x

    @property
    def p(self) -> np.ndarray:
        return self.payments.p


@dataclass(frozen=True)
class SettlementRecord:
    x: np.ndarray
    p: np.ndarray
    x_hat: np.ndarray
    x_accepted: np.ndarray
    p_realized: np.ndarray
    utility: np.ndarray  # NaN where no profile was supplied


@functools.lru_cache(maxsize=64)
def _is_regular(dist: BidDistribution) -> bool:
    return dist.check_regularity(1000)


def run_stage1(bids, capacities, k, c, dist: BidDistribution, rtol: float = DEFAULT_RTOL) -> Stage1Result:
    if not _is_regular(dist):
        raise ConfigurationError("bid distribution is not regular (virtual welfare not increasing)")
    inst = AuctionInstance.from_bids(bids, capacities, k, c, dist)
    return Stage1Result(inst, solve(inst), payment_schedule(inst, dist, rtol))


def run_stage2(
    stage1: Stage1Result,
    submissions: Sequence[WorkSubmission],
    profiles: Sequence[WorkerProfile | None] | None = None,
) -> SettlementRecord:
    n = stage1.instance.n
    if len(submissions) != n:
        raise DomainError(f"expected {n} submissions, got {len(submissions)}")
    x, p = stage1.x, stage1.p
    x_hat = np.array([s.x_hat for s in submissions], dtype=float)
    accepted = np.array([s.accepted(xi) for s, xi in zip(submissions, x)])
    p_real = np.where(x > 0, p * accepted / np.where(x > 0, x, 1.0), 0.0)
    utility = np.full(n, np.nan)
    if profiles is not None:
        for i, prof in enumerate(profiles):
            if prof is None:
                continue
            utility[i] = p_real[i] - x_hat[i] * prof.v if x_hat[i] <= prof.x_max else 0.0
    return SettlementRecord(x.copy(), p.copy(), x_hat, accepted, p_real, utility)


def draw_alpha(beta, rng: np.random.Generator | None = None, concentration: float | None = None):
    """Acceptable fraction for each worker.

    Deterministic ``alpha = beta`` by default; with ``concentration`` a
    Beta draw with mean ``beta``.
    """
    beta = np.asarray(beta, dtype=float)
    if concentration is None:
        return beta.copy()
    rng = np.random.default_rng(rng)
    a = beta * concentration
    b = (1.0 - beta) * concentration
    out = beta.copy()
    mixed = b > 0
    out[mixed] = rng.beta(a[mixed], b[mixed])
    return out


# ---------------------------------------------------------------------------
# utility of one worker holding everyone else fixed


@dataclass(frozen=True)
class BidContext:
    """Everything one worker's utility depends on besides their own play.

    The worker is placed at index 0 of the instance built by
    :meth:`instance`.
    """

    other_bids: np.ndarray
    other_capacities: np.ndarray
    k: object
    c: float
    dist: BidDistribution

    def __post_init__(self) -> None:
        object.__setattr__(self, "other_bids", np.asarray(self.other_bids, dtype=float))
        object.__setattr__(self, "other_capacities", np.asarray(self.other_capacities, dtype=float))
        object.__setattr__(
            self, "_other_delta", np.atleast_1d(self.dist.virtual_welfare(self.other_bids))
        )

    def instance(self, bid: float, capacity: float) -> AuctionInstance:
        delta = np.concatenate([[self.dist.virtual_welfare(bid)], self._other_delta])
        return AuctionInstance(
            np.concatenate([[bid], self.other_bids]),
            np.concatenate([[capacity], self.other_capacities]),
            delta,
            self.k,
            self.c,
        )

    def outcome(self, bid: float, capacity: float, rtol: float = DEFAULT_RTOL) -> tuple[float, float]:
        """``(x, p)`` for the worker bidding ``(bid, capacity)``."""
        sched = self.outcomes([bid], [capacity], rtol)
        return float(sched.x[0]), float(sched.p[0])

    def outcomes(self, bids, capacities, rtol: float = DEFAULT_RTOL) -> PaymentSchedule:
        """Vectorised :meth:`outcome` over paired arrays of reports."""
        return variant_payments(
            bids, capacities, self.other_bids, self.other_capacities,
            self.k, self.c, self.dist, rtol,
        )

    def allocation_curve(self, capacity: float, grid) -> np.ndarray:
        grid = np.asarray(grid, dtype=float)
        inst = self.instance(float(grid[0]), capacity)
        delta = np.tile(inst.delta, (grid.size, 1))
        delta[:, 0] = self.dist.virtual_welfare(grid)
        return solve_rows(delta, inst.capacities, inst.c, inst.k)[:, 0]


def utility_from_outcome(
    profile: WorkerProfile, x: float, p: float, x_hat: float, omega: Omega | None = None
) -> float:
    """Expected utility given the stage-1 outcome ``(x, p)`` and submitted work.

    ``omega=None`` is the strict form (zero utility beyond true capacity);
    otherwise ``omega(x_hat, x_max)`` downweights over-capacity work.
    """
    if x_hat < 0:
        raise DomainError("submitted work must be non-negative")
    over = x_hat > profile.x_max
    if omega is None:
        if over:
            return 0.0
        weight = 1.0
    else:
        weight = float(omega(x_hat, profile.x_max))
        if over and not weight < profile.x_max / x_hat:
            warnings.warn(
                "downweighting function does not fall below x_max / x_hat beyond capacity",
                ContractWarning,
                stacklevel=2,
            )
        elif not over and weight != 1.0:
            warnings.warn("downweighting must equal 1 within capacity", ContractWarning, stacklevel=2)
    # x == 0 forces p == 0 (non-increasing allocation), so the fraction is moot
    frac = 1.0 if x <= 0 else min(x_hat / x, 1.0)
    return weight * (profile.beta * frac * p - x_hat * profile.v)


def worker_utility(
    profile: WorkerProfile,
    bid: float,
    capacity: float,
    x_hat: float,
    context: BidContext,
    omega: Omega | None = None,
) -> float:
    x, p = context.outcome(bid, capacity)
    return utility_from_outcome(profile, x, p, x_hat, omega)
