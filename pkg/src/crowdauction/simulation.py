"""Monte Carlo studies of worker return on investment and requester cost.

Four tables come out of :func:`run_simulation`:

* ``fig2_roi``: a probe worker's ROI against their unit cost, raw and
  monotone-smoothed, for every ``(n, rho, gamma, k)``;
* ``fig3_participation``: the fraction of workers whose ROI is non-negative;
* ``fig4_inflation``: expected total cost at ``k`` relative to ``k = inf``;
* ``fig5_tradeoff``: inflation and participation paired along the ``k`` sweep.

Random numbers follow a common-random-numbers layout: the population used
in repeat ``r`` for size ``n`` is the same for every ``k``, ``rho`` and
probe setting, so differences between cells are not sampling noise.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .allocation import K_INF, AuctionInstance, k_label, parse_k, solve_rows
from .distributions import DEFAULT_BIDS, BidDistribution
from .errors import ConfigurationError, DomainError
from .payment import payment_schedule, variant_payments

DEFAULT_K_GRID = (0.0, 1.0, 2.0, 4.0, 8.0, K_INF)
DEFAULT_QUANTILES = tuple(round(0.1 * j, 1) for j in range(1, 10))
DEFAULT_GAMMAS = (0.0, 1.0, 2.0, 3.0, 4.0, 5.0)


def _label_int(label) -> int:
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise DomainError("stream labels must be non-negative")
        return int(label)
    digest = hashlib.sha256(str(label).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def stream(seed: int, *labels) -> np.random.Generator:
    """Independent generator for ``(seed, *labels)``.

    Integer labels are used as they are; anything else is replaced by the
    first 8 bytes (little endian) of the SHA-256 of its ``str``. The list
    ``[seed, *labels]`` seeds a ``numpy.random.SeedSequence`` feeding PCG64.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed)] + [_label_int(v) for v in labels])))


@dataclass(frozen=True)
class SimulationConfig:
    n_values: tuple[int, ...] = (10, 100)
    rhos: tuple[float, ...] = (0.1, 0.5)
    k_grid: tuple = DEFAULT_K_GRID
    repeats: int = 100
    quantiles: tuple[float, ...] = DEFAULT_QUANTILES
    gammas: tuple[float, ...] = DEFAULT_GAMMAS
    probe_x_max: float = 100.0
    probe_beta: float = 0.95
    cap_scale: float = 100.0
    cap_sigma: float = 0.3
    beta_range: tuple[float, float] = (0.9, 1.0)
    seed: int = 0
    dist: BidDistribution = field(default=DEFAULT_BIDS)

    def __post_init__(self) -> None:
        object.__setattr__(self, "k_grid", tuple(parse_k(k) for k in self.k_grid))
        for name in ("n_values", "rhos", "k_grid", "quantiles", "gammas"):
            if len(getattr(self, name)) == 0:
                raise ConfigurationError(f"{name} must not be empty")
        if self.repeats < 1:
            raise ConfigurationError("repeats must be >= 1")
        if any(n < 2 for n in self.n_values):
            raise ConfigurationError("every n must be >= 2 (a probe plus competitors)")
        if any(not 0 < r <= 1 for r in self.rhos):
            raise ConfigurationError("rho must lie in (0, 1]")
        if any(not 0 < a < 1 for a in self.quantiles):
            raise ConfigurationError("probe quantiles must lie in (0, 1)")
        if any(g < 0 for g in self.gammas):
            raise ConfigurationError("indirect costs must be non-negative")
        if not 0 < self.probe_beta <= 1:
            raise ConfigurationError("probe beta must lie in (0, 1]")
        lo, hi = self.beta_range
        if not 0 < lo <= hi <= 1:
            raise ConfigurationError("beta range must satisfy 0 < lo <= hi <= 1")

    def work(self, n: int, rho: float) -> float:
        """Total requested work ``c = cap_scale * n * rho``."""
        return self.cap_scale * n * rho


@dataclass(frozen=True)
class Population:
    bids: np.ndarray
    capacities: np.ndarray
    betas: np.ndarray


def sample_population(config: SimulationConfig, n: int, repeat: int) -> Population:
    """The workers of repeat ``repeat`` at size ``n``.

    Draws that could not cover the largest configured ``c``, either as
    drawn or with worker 0 replaced by the probe, are redrawn from the same
    stream, so every cell sees identical populations.
    """
    rng = stream(config.seed, "population", n, repeat)
    need = config.work(n, max(config.rhos))
    for _ in range(10_000):
        bids = config.dist.sample(rng, n)
        caps = config.cap_scale * rng.lognormal(0.0, config.cap_sigma, n)
        betas = rng.uniform(*config.beta_range, n)
        if caps.sum() >= need and caps[1:].sum() + config.probe_x_max >= need:
            return Population(bids, caps, betas)
    raise ConfigurationError("could not draw a population with enough capacity for c")


def populations(config: SimulationConfig, n: int) -> list[Population]:
    return [sample_population(config, n, r) for r in range(config.repeats)]


# ---------------------------------------------------------------------------
# ROI of a probe worker


@dataclass(frozen=True)
class RoiCurve:
    v: np.ndarray
    roi: np.ndarray
    smoothed: np.ndarray


def roi_ratio(mean_paid: float, mean_work: float, v: float, gamma: float) -> float:
    """``mean_paid / (mean_work * v + gamma) - 1``.

    A probe never given work has zero cost and zero pay; its ROI is 0 when
    there is no indirect cost and -1 otherwise.
    """
    denom = mean_work * v + gamma
    if denom <= 0:
        return 0.0
    return mean_paid / denom - 1.0


def probe_outcomes(config: SimulationConfig, n: int, rho: float, k, pops=None):
    """Probe work and pay for every quantile and repeat.

    Returns ``(x, p)`` arrays of shape ``(len(quantiles), repeats)``. The
    probe replaces worker 0 of each population; everyone plays truthfully.
    """
    pops = populations(config, n) if pops is None else pops
    q = np.asarray(config.quantiles, dtype=float)
    b1 = np.asarray(config.dist.quantile(q), dtype=float)
    others_b = np.stack([pop.bids[1:] for pop in pops])
    others_c = np.stack([pop.capacities[1:] for pop in pops])
    m, r = q.size, len(pops)
    sched = variant_payments(
        np.repeat(b1, r),
        config.probe_x_max,
        np.tile(others_b, (m, 1)),
        np.tile(others_c, (m, 1)),
        k,
        config.work(n, rho),
        config.dist,
    )
    return sched.x.reshape(m, r), sched.p.reshape(m, r)


def estimate_roi(
    config: SimulationConfig, n: int, rho: float, k, quantile: float, gamma: float = 0.0
) -> float:
    """ROI of one probe at bid quantile ``quantile`` over the configured repeats."""
    sub = SimulationConfig(**{**config.__dict__, "quantiles": (quantile,)})
    x, p = probe_outcomes(sub, n, rho, k)
    v = float(config.dist.quantile(quantile)) * config.probe_beta
    return roi_ratio(config.probe_beta * p.mean(), x.mean(), v, gamma)


def monotone_smooth(v, roi) -> RoiCurve:
    """Least-squares non-increasing fit (pool adjacent violators).

    ``v`` need not be sorted; the fit is returned in the input order.
    """
    v = np.asarray(v, dtype=float)
    y = np.asarray(roi, dtype=float)
    if v.shape != y.shape or v.size < 2:
        raise DomainError("need at least two matching (v, roi) points")
    order = np.argsort(v, kind="stable")
    means: list[float] = []
    weights: list[int] = []
    for value in y[order]:
        means.append(float(value))
        weights.append(1)
        while len(means) > 1 and means[-2] < means[-1]:
            w = weights[-2] + weights[-1]
            means[-2] = (means[-2] * weights[-2] + means[-1] * weights[-1]) / w
            weights[-2] = w
            means.pop()
            weights.pop()
    fitted = np.repeat(means, weights)
    out = np.empty_like(y)
    out[order] = fitted
    return RoiCurve(v.copy(), y.copy(), out)


def zero_crossing(curve: RoiCurve) -> float | None:
    """Unit cost where the smoothed ROI falls through 0 (linear interpolation).

    ``None`` when the smoothed curve never changes sign.
    """
    order = np.argsort(curve.v, kind="stable")
    v, y = curve.v[order], curve.smoothed[order]
    if y[-1] >= 0:
        return None
    if y[0] < 0:
        return None
    j = int(np.flatnonzero(y < 0)[0])
    v0, v1, y0, y1 = v[j - 1], v[j], y[j - 1], y[j]
    return float(v0 + (v1 - v0) * y0 / (y0 - y1))


def participation_rate(curve: RoiCurve, dist: BidDistribution = DEFAULT_BIDS, beta: float = 0.95) -> float:
    """Share of workers whose smoothed ROI is non-negative.

    Workers with unit cost below the zero crossing participate; costs map
    to bids through ``b = v / beta``. With no crossing the answer is 1 or
    0 by the sign of the curve.
    """
    v_star = zero_crossing(curve)
    if v_star is None:
        return 1.0 if np.all(curve.smoothed >= 0) else 0.0
    b = min(max(v_star / beta, dist.lower), dist.upper)
    return float(dist.cdf(b))


# ---------------------------------------------------------------------------
# requester cost


def total_costs(config: SimulationConfig, n: int, rho: float, k, pops=None, mode: str = "virtual"):
    """Expected total cost of each repeat.

    ``mode="virtual"`` is ``sum_i x_i delta_i``; ``mode="payment"`` is the
    sum of maximum payments, which has the same mean over bid draws.
    """
    pops = populations(config, n) if pops is None else pops
    bids = np.stack([pop.bids for pop in pops])
    caps = np.stack([pop.capacities for pop in pops])
    delta = config.dist.virtual_welfare(bids)
    c = config.work(n, rho)
    if mode == "virtual":
        x = solve_rows(delta, caps, c, k)
        return (x * delta).sum(axis=1)
    if mode == "payment":
        return np.array(
            [
                payment_schedule(AuctionInstance(b, cp, d, k, c), config.dist).p.sum()
                for b, cp, d in zip(bids, caps, delta)
            ]
        )
    raise ConfigurationError(f"unknown cost mode {mode!r}")


def cost_inflation(config: SimulationConfig, n: int, rho: float, pops=None, mode: str = "virtual") -> dict:
    """``mean cost(k) / mean cost(inf)`` for each ``k`` in the grid, same populations."""
    pops = populations(config, n) if pops is None else pops
    base = total_costs(config, n, rho, K_INF, pops, mode).mean()
    return {k: float(total_costs(config, n, rho, k, pops, mode).mean() / base) for k in config.k_grid}


# ---------------------------------------------------------------------------
# full run


@dataclass
class SimulationTables:
    fig2_roi: list[dict] = field(default_factory=list)
    fig3_participation: list[dict] = field(default_factory=list)
    fig4_inflation: list[dict] = field(default_factory=list)
    fig5_tradeoff: list[dict] = field(default_factory=list)


def _run_cell(config: SimulationConfig, n: int, rho: float, pops) -> SimulationTables:
    tables = SimulationTables()
    q = np.asarray(config.quantiles, dtype=float)
    v = np.asarray(config.dist.quantile(q), dtype=float) * config.probe_beta
    inflation = cost_inflation(config, n, rho, pops)
    participation: dict = {}
    for k in config.k_grid:
        x, p = probe_outcomes(config, n, rho, k, pops)
        paid = config.probe_beta * p.mean(axis=1)
        work = x.mean(axis=1)
        for gamma in config.gammas:
            raw = np.array([roi_ratio(pj, wj, vj, gamma) for pj, wj, vj in zip(paid, work, v)])
            curve = monotone_smooth(v, raw)
            for vj, rj, sj in zip(v, raw, curve.smoothed):
                tables.fig2_roi.append(
                    dict(n=n, rho=rho, gamma=gamma, k=k_label(k), v1=float(vj),
                         roi_raw=float(rj), roi_smoothed=float(sj))
                )
            part = participation_rate(curve, config.dist, config.probe_beta)
            participation[(k, gamma)] = part
            tables.fig3_participation.append(
                dict(n=n, rho=rho, gamma=gamma, k=k_label(k), participation=part)
            )
        tables.fig4_inflation.append(dict(n=n, rho=rho, k=k_label(k), inflation=inflation[k]))
    for gamma in config.gammas:
        for k in config.k_grid:
            tables.fig5_tradeoff.append(
                dict(n=n, rho=rho, gamma=gamma, k=k_label(k), inflation=inflation[k],
                     participation=participation[(k, gamma)])
            )
    return tables


def run_simulation(config: SimulationConfig, threads: int = 1) -> SimulationTables:
    """All four tables. ``(n, rho)`` cells may run on ``threads`` threads;
    the output is identical either way."""
    pops = {n: populations(config, n) for n in config.n_values}
    cells = [(n, rho) for n in config.n_values for rho in config.rhos]
    if threads > 1 and len(cells) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda cell: _run_cell(config, *cell, pops[cell[0]]), cells))
    else:
        parts = [_run_cell(config, n, rho, pops[n]) for n, rho in cells]
    tables = SimulationTables()
    for part in parts:
        for name in FIG_COLUMNS:
            getattr(tables, name).extend(getattr(part, name))
    return tables


FIG_COLUMNS = {
    "fig2_roi": ("n", "rho", "gamma", "k", "v1", "roi_raw", "roi_smoothed"),
    "fig3_participation": ("n", "rho", "gamma", "k", "participation"),
    "fig4_inflation": ("n", "rho", "k", "inflation"),
    "fig5_tradeoff": ("n", "rho", "gamma", "k", "inflation", "participation"),
}

