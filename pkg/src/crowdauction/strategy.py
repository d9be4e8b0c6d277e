"""Empirical best-response search for one worker.

The worker's play is ``theta = (b, x_max_hat, x_hat)``. The nominal
(truthful) play is ``(v / beta, x_max, x)`` where ``x`` is the work the
mechanism then requests. A bounded derivative-free search looks for a play
with strictly higher utility, holding every other worker's report fixed.

Internally the third coordinate is the ratio ``r = x_hat / x(b, x_max_hat)``
so the search box stays meaningful as the requested work moves with the
other two coordinates.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .allocation import K_INF, k_label, parse_k
from .distributions import DEFAULT_BIDS, BidDistribution
from .errors import ContractWarning, DomainError
from .mechanism import BidContext, WorkerProfile, utility_from_outcome

#: relative gain a candidate must beat to count as an improvement
IMPROVEMENT_TOL = 1e-9
#: coordinates within this relative difference count as equal
AGREEMENT_TOL = 1e-3
#: search box half-widths around the nominal play
BID_RANGE = (0.5, 1.5)
CAPACITY_RANGE = (0.5, 1.5)
RATIO_RANGE = (0.5, 1.5)
COORDINATES = ("b", "x_max_hat", "x_hat")


@dataclass(frozen=True)
class StrategyPoint:
    b: float
    x_max_hat: float
    x_hat: float
    utility: float = math.nan

    def __post_init__(self) -> None:
        if min(self.b, self.x_max_hat, self.x_hat) < 0:
            raise DomainError("strategy coordinates must be non-negative")


@dataclass(frozen=True)
class OmegaSpec:
    """Linear downweighting ``1 + s (x_hat - x_max) / x_max`` beyond capacity."""

    slope: float

    def __post_init__(self) -> None:
        if not self.slope < 0:
            raise DomainError("slope must be negative")

    @property
    def satisfies_cap(self) -> bool:
        """Whether the weight stays below ``x_max / x_hat`` past capacity."""
        return self.slope <= -1.0

    def __call__(self, x_hat: float, x_max: float) -> float:
        if x_hat <= x_max:
            return 1.0
        return 1.0 + self.slope * (x_hat - x_max) / x_max


class _Objective:
    """Utility of one worker with payments cached per ``(b, x_max_hat)``."""

    def __init__(self, profile: WorkerProfile, context: BidContext, omega):
        self.profile = profile
        self.context = context
        self.omega = omega
        self.cache: dict[tuple[float, float], tuple[float, float]] = {}

    def outcome(self, b: float, cap: float) -> tuple[float, float]:
        key = (float(b), float(cap))
        hit = self.cache.get(key)
        if hit is None:
            hit = self.context.outcome(*key)
            self.cache[key] = hit
        return hit

    def utility(self, b: float, cap: float, r: float) -> float:
        x, p = self.outcome(b, cap)
        return utility_from_outcome(self.profile, x, p, r * x, self.omega)


def _box(profile: WorkerProfile, context: BidContext, start: StrategyPoint):
    b_hi = min(BID_RANGE[1] * start.b, context.dist.upper)
    b_lo = min(BID_RANGE[0] * start.b, b_hi)
    return np.array(
        [
            [b_lo, b_hi],
            [CAPACITY_RANGE[0] * profile.x_max, CAPACITY_RANGE[1] * profile.x_max],
            list(RATIO_RANGE),
        ]
    )


def _improves(new: float, old: float) -> bool:
    return new > old + IMPROVEMENT_TOL * max(1.0, abs(old))


def search_best_response(
    profile: WorkerProfile,
    context: BidContext,
    omega: OmegaSpec | None = None,
    start: StrategyPoint | None = None,
    passes: int = 3,
    polish_evals: int = 60,
) -> StrategyPoint:
    """Bounded local search for a play better than ``start``.

    Bounded golden-section/Brent passes over one coordinate at a time,
    then a bounded Nelder-Mead polish over all three. A move is kept only
    if it improves utility by more than ``IMPROVEMENT_TOL`` relative, so
    flat directions never drift. ``start`` defaults to the nominal play.
    The search is deterministic.
    """
    obj = _Objective(profile, context, omega)
    if start is None:
        start = StrategyPoint(_truthful_bid(profile, context), profile.x_max, 0.0)
    x0, _ = obj.outcome(start.b, start.x_max_hat)
    r0 = 1.0 if start.x_hat == 0.0 or x0 <= 0 else start.x_hat / x0
    box = _box(profile, context, start)
    theta = np.array([start.b, start.x_max_hat, r0])
    theta = np.clip(theta, box[:, 0], box[:, 1])

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ContractWarning)
        best = obj.utility(*theta)
        for _ in range(passes):
            moved = False
            for j in range(3):
                lo, hi = box[j]
                if hi <= lo:
                    continue

                def along(t, j=j):
                    trial = theta.copy()
                    trial[j] = t
                    return -obj.utility(*trial)

                res = optimize.minimize_scalar(
                    along, bounds=(lo, hi), method="bounded",
                    options={"xatol": 1e-7 * max(1.0, abs(hi))},
                )
                if _improves(-res.fun, best):
                    theta[j] = res.x
                    best = -res.fun
                    moved = True
            if not moved:
                break

        width = box[:, 1] - box[:, 0]
        simplex = np.vstack([theta] + [theta + np.eye(3)[j] * 0.02 * width[j] for j in range(3)])
        simplex = np.clip(simplex, box[:, 0], box[:, 1])
        res = optimize.minimize(
            lambda t: -obj.utility(*np.clip(t, box[:, 0], box[:, 1])),
            theta,
            method="Nelder-Mead",
            bounds=list(map(tuple, box)),
            options={"maxfev": polish_evals, "initial_simplex": simplex, "xatol": 1e-8, "fatol": 1e-12},
        )
        if _improves(-res.fun, best):
            theta = np.clip(res.x, box[:, 0], box[:, 1])
            best = obj.utility(*theta)

    x, _ = obj.outcome(theta[0], theta[1])
    return StrategyPoint(float(theta[0]), float(theta[1]), float(theta[2] * x), float(best))


def _truthful_bid(profile: WorkerProfile, context: BidContext) -> float:
    # v / beta can overshoot the support edge by an ulp after the round trip
    return min(profile.truthful_bid, context.dist.upper)


def nominal_point(profile: WorkerProfile, context: BidContext, omega=None) -> StrategyPoint:
    """Truthful play and its utility."""
    b = _truthful_bid(profile, context)
    x, p = context.outcome(b, profile.x_max)
    return StrategyPoint(b, profile.x_max, x, utility_from_outcome(profile, x, p, x, omega))


def lattice_certificate(
    profile: WorkerProfile, context: BidContext, points: int = 21, spread: float = 0.5, omega=None
) -> tuple[float, float]:
    """Best utility on a ``points**3`` lattice around nominal, and the nominal utility.

    The lattice spans ``(1 +/- spread)`` times each nominal coordinate
    (bids clipped to the support). Submitted work is measured relative to
    the nominal requested work.
    """
    nominal = nominal_point(profile, context, omega)
    steps = np.linspace(1.0 - spread, 1.0 + spread, points)
    bids = np.clip(nominal.b * steps, context.dist.lower + 1e-12, context.dist.upper)
    caps = profile.x_max * steps
    B, C = np.meshgrid(bids, caps, indexing="ij")
    sched = context.outcomes(B.ravel(), C.ravel())
    x_hats = max(nominal.x_hat, 1e-12) * steps
    best = -math.inf
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ContractWarning)
        for x, p in zip(sched.x, sched.p):
            for xh in x_hats:
                best = max(best, utility_from_outcome(profile, x, p, xh, omega))
    return best, nominal.utility


# ---------------------------------------------------------------------------
# departure study


@dataclass(frozen=True)
class CoordinateDeparture:
    agreement: float
    mean_rel_diff: float  # NaN when every trial agreed


@dataclass(frozen=True)
class DepartureReport:
    k: object
    slope: float
    trials: int
    coordinates: dict = field(default_factory=dict)  # name -> CoordinateDeparture
    max_gain: float = 0.0  # largest relative utility gain over nominal found

    def rows(self):
        for name in COORDINATES:
            d = self.coordinates[name]
            yield {
                "k": k_label(self.k) if self.k is K_INF else self.k,
                "s": self.slope,
                "coordinate": name,
                "agreement": d.agreement,
                "mean_rel_diff": d.mean_rel_diff,
                "trials": self.trials,
            }


@dataclass(frozen=True)
class StudyContext:
    """One sampled trial: the probed worker and their competitors."""

    profile: WorkerProfile
    context: BidContext


def sample_trial(
    rng: np.random.Generator,
    n: int = 10,
    rho: float = 0.1,
    k=2.0,
    dist: BidDistribution = DEFAULT_BIDS,
    cap_scale: float = 100.0,
    cap_sigma: float = 0.3,
    beta_range: tuple[float, float] = (0.9, 1.0),
) -> StudyContext:
    """Draw a population and condition the probed worker on ``F(b) < rho``.

    The conditioning is applied by drawing the probed worker's bid from the
    prior restricted to its lower ``rho`` quantile, which has the same law
    as rejection sampling. Draws whose total capacity cannot cover
    ``c = cap_scale * n * rho`` are redrawn.
    """
    c = cap_scale * n * rho
    while True:
        bids = dist.sample(rng, n)
        bids[0] = dist.quantile(rho * (rng.random() + 2.0**-54))
        caps = cap_scale * rng.lognormal(0.0, cap_sigma, n)
        betas = rng.uniform(*beta_range, n)
        if caps.sum() >= c:
            break
    profile = WorkerProfile(v=float(bids[0] * betas[0]), x_max=float(caps[0]), beta=float(betas[0]))
    return StudyContext(profile, BidContext(bids[1:], caps[1:], parse_k(k), c, dist))


def _rel(a: float, b: float) -> float:
    if b == 0:
        return 0.0 if a == 0 else math.inf
    return abs(a - b) / abs(b)


def departure_study(
    n_trials: int = 100,
    k_grid=(0.0, 1.0, 2.0, 4.0, 8.0, K_INF),
    s_values=(-0.5, -0.25),
    seed: int = 0,
    n: int = 10,
    rho: float = 0.1,
    dist: BidDistribution = DEFAULT_BIDS,
    threads: int = 1,
) -> list[DepartureReport]:
    """Tabulate how often the searched best response equals nominal play.

    Every ``(k, s)`` cell reuses the same sampled trials (common random
    numbers). Trial ``t`` draws from ``stream(seed, "departure", t)``.
    Cells may run on ``threads`` threads; results do not depend on it.
    """
    from .simulation import stream  # local import: simulation depends on this module

    trials = [sample_trial(stream(seed, "departure", t), n, rho, 0.0, dist) for t in range(n_trials)]
    cells = [(parse_k(k), float(s)) for k in k_grid for s in s_values]

    def run_cell(cell) -> DepartureReport:
        k, s = cell
        omega = OmegaSpec(s)
        hits = {name: [] for name in COORDINATES}
        diffs = {name: [] for name in COORDINATES}
        max_gain = 0.0
        for trial in trials:
            ctx = BidContext(
                trial.context.other_bids, trial.context.other_capacities, k, trial.context.c, dist
            )
            nominal = nominal_point(trial.profile, ctx, omega)
            found = search_best_response(trial.profile, ctx, omega)
            gain = (found.utility - nominal.utility) / max(1.0, abs(nominal.utility))
            max_gain = max(max_gain, gain)
            x_found, _ = ctx.outcome(found.b, found.x_max_hat)
            pairs = {
                "b": (found.b, nominal.b),
                "x_max_hat": (found.x_max_hat, nominal.x_max_hat),
                "x_hat": (found.x_hat, x_found),
            }
            for name, (a, b) in pairs.items():
                d = _rel(a, b)
                hits[name].append(d < AGREEMENT_TOL)
                if d >= AGREEMENT_TOL:
                    diffs[name].append(d)
        coords = {
            name: CoordinateDeparture(
                float(np.mean(hits[name])),
                float(np.mean(diffs[name])) if diffs[name] else math.nan,
            )
            for name in COORDINATES
        }
        return DepartureReport(k, s, n_trials, coords, max_gain)

    if threads > 1 and len(cells) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(run_cell, cells))
    return [run_cell(cell) for cell in cells]
