"""Bid priors: density, distribution, quantile, sampling and virtual welfare.

Every bid in an auction round is assumed to be drawn from one common prior
supported on ``[lower, upper]``. The allocation rule only ever sees bids
through the virtual welfare ``delta(b) = b + F(b) / f(b)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np
from scipy import special

from .errors import ConfigurationError, DomainError, SingularityError

KINDS = ("truncated-log-normal", "uniform", "tabulated")

#: densities below this are treated as numerically singular for F/f
MIN_DENSITY = 1e-12

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
# rng.random() returns multiples of 2**-53 in [0, 1); this shift maps them into (0, 1)
_HALF_ULP = 2.0 ** -54


@dataclass(frozen=True)
class BidDistribution:
    """A prior over unit bids.

    Use the :func:`truncated_lognormal`, :func:`uniform` and :func:`tabulated`
    constructors rather than building instances directly. Instances are
    immutable and safe to share between threads.
    """

    kind: str
    mu: float = 0.0
    sigma: float = 1.0
    upper: float = 1.0
    lower: float = 0.0
    knots: tuple[float, ...] = field(default=(), repr=False)
    cdf_values: tuple[float, ...] = field(default=(), repr=False)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown distribution kind {self.kind!r}")
        if not (self.upper > self.lower >= 0.0):
            raise ConfigurationError(
                f"need upper > lower >= 0, got lower={self.lower}, upper={self.upper}"
            )
        if self.kind == "truncated-log-normal" and not self.sigma > 0:
            raise ConfigurationError("sigma must be positive")
        if self.kind == "tabulated":
            b = np.asarray(self.knots, dtype=float)
            F = np.asarray(self.cdf_values, dtype=float)
            if b.ndim != 1 or b.size < 2 or b.shape != F.shape:
                raise ConfigurationError("tabulated CDF needs >= 2 matching knots")
            if np.any(np.diff(b) <= 0) or np.any(np.diff(F) < 0):
                raise ConfigurationError("knots must increase and CDF must not decrease")
            if F[0] != 0.0 or F[-1] != 1.0:
                raise ConfigurationError("tabulated CDF must run from 0 to 1")
            if b[0] != self.lower or b[-1] != self.upper:
                raise ConfigurationError("tabulated support must match the knot range")

    # -- untruncated log-normal helpers -------------------------------------

    def _z(self, b):
        with np.errstate(divide="ignore"):
            return (np.log(b) - self.mu) / self.sigma

    @property
    def _mass_below_lower(self) -> float:
        return 0.0 if self.lower == 0.0 else float(special.ndtr(self._z(self.lower)))

    @property
    def _mass(self) -> float:
        return float(special.ndtr(self._z(self.upper))) - self._mass_below_lower

    # -- public interface ---------------------------------------------------

    def _checked(self, b) -> np.ndarray:
        arr = np.asarray(b, dtype=float)
        if np.any(np.isnan(arr)) or np.any(arr < self.lower) or np.any(arr > self.upper):
            raise DomainError(
                f"bid outside the support [{self.lower}, {self.upper}]"
            )
        return arr

    @staticmethod
    def _out(arr, like):
        return float(arr) if np.ndim(like) == 0 else arr

    def pdf(self, b):
        """Density of the truncated prior at ``b``."""
        x = self._checked(b)
        if self.kind == "uniform":
            out = np.full_like(x, 1.0 / (self.upper - self.lower))
        elif self.kind == "tabulated":
            out = self._tab_slope(x)
        else:
            out = np.zeros_like(x)
            pos = x > 0
            z = self._z(x[pos])
            out[pos] = np.exp(-0.5 * z * z - _LOG_SQRT_2PI) / (
                x[pos] * self.sigma * self._mass
            )
        return self._out(out, b)

    def cdf(self, b):
        x = self._checked(b)
        if self.kind == "uniform":
            out = (x - self.lower) / (self.upper - self.lower)
        elif self.kind == "tabulated":
            out = np.interp(x, self.knots, self.cdf_values)
        else:
            out = (special.ndtr(self._z(x)) - self._mass_below_lower) / self._mass
            out = np.clip(out, 0.0, 1.0)
        return self._out(out, b)

    def quantile(self, q):
        qa = np.asarray(q, dtype=float)
        if np.any(np.isnan(qa)) or np.any(qa < 0.0) or np.any(qa > 1.0):
            raise DomainError("probability outside [0, 1]")
        if self.kind == "uniform":
            out = self.lower + qa * (self.upper - self.lower)
        elif self.kind == "tabulated":
            out = np.interp(qa, self.cdf_values, self.knots)
        else:
            p = self._mass_below_lower + qa * self._mass
            out = np.exp(self.mu + self.sigma * special.ndtri(p))
            out = np.clip(out, self.lower, self.upper)
        return self._out(out, q)

    def virtual_welfare(self, b):
        """``b + F(b) / f(b)``.

        At points where ``F(b) = 0`` the ratio is taken as its limit 0, so
        the lower support edge maps to itself. Raises
        :class:`SingularityError` where the density vanishes but ``F`` does
        not.
        """
        x = self._checked(b)
        if self.kind == "truncated-log-normal":
            ratio = self._lognormal_mills(x)
        else:
            F = np.asarray(self.cdf(x), dtype=float)
            f = np.asarray(self.pdf(x), dtype=float)
            ratio = np.zeros_like(x)
            live = F > 0
            if np.any(live & (f < MIN_DENSITY)):
                raise SingularityError("density vanishes where F > 0; F/f undefined")
            ratio[live] = F[live] / f[live]
        return self._out(x + ratio, b)

    def _lognormal_mills(self, x: np.ndarray) -> np.ndarray:
        # F/f = b * sigma * (Phi(z) - Phi(z_lo)) / phi(z), in log space
        ratio = np.zeros_like(x)
        pos = x > self.lower
        if not np.any(pos):
            return ratio
        xp = x[pos]
        z = self._z(xp)
        log_num = special.log_ndtr(z)
        if self.lower > 0:
            lo = special.log_ndtr(self._z(self.lower))
            log_num = log_num + np.log1p(-np.exp(lo - log_num))
        log_phi = -0.5 * z * z - _LOG_SQRT_2PI
        ratio[pos] = xp * self.sigma * np.exp(log_num - log_phi)
        if not np.all(np.isfinite(ratio)):
            raise SingularityError("F/f overflowed; density is numerically zero")
        return ratio

    def _tab_slope(self, x: np.ndarray) -> np.ndarray:
        b = np.asarray(self.knots)
        F = np.asarray(self.cdf_values)
        slopes = np.diff(F) / np.diff(b)
        # right-continuous slope; the top knot takes the last segment's slope
        idx = np.clip(np.searchsorted(b, x, side="right") - 1, 0, slopes.size - 1)
        return slopes[idx]

    def check_regularity(self, grid_size: int = 1000) -> bool:
        """True iff virtual welfare is strictly increasing on a uniform grid."""
        if grid_size < 2:
            raise DomainError("grid_size must be >= 2")
        grid = np.linspace(self.lower, self.upper, grid_size)
        try:
            d = self.virtual_welfare(grid)
        except SingularityError:
            return False
        return bool(np.all(np.diff(d) > 0))

    def sample(self, rng: np.random.Generator | int | None, n: int) -> np.ndarray:
        """``n`` i.i.d. draws by inverse-CDF sampling."""
        if n < 1:
            raise DomainError("n must be >= 1")
        rng = np.random.default_rng(rng)
        u = rng.random(n) + _HALF_ULP
        return np.asarray(self.quantile(u), dtype=float)

    # -- serialisation ------------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        if self.kind != "tabulated":
            d.pop("knots")
            d.pop("cdf_values")
        else:
            d["knots"] = list(self.knots)
            d["cdf_values"] = list(self.cdf_values)
        if self.kind != "truncated-log-normal":
            d.pop("mu")
            d.pop("sigma")
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "BidDistribution":
        d = dict(d)
        kind = d.pop("kind", "truncated-log-normal")
        unknown = set(d) - {"mu", "sigma", "upper", "lower", "knots", "cdf_values"}
        if unknown:
            raise ConfigurationError(f"unknown distribution fields: {sorted(unknown)}")
        if kind == "truncated-log-normal":
            return truncated_lognormal(
                d.get("mu", 0.0), d.get("sigma", 0.3), d.get("upper"), d.get("lower", 0.0)
            )
        if kind == "uniform":
            return uniform(d.get("lower", 0.0), d.get("upper", 1.0))
        if kind == "tabulated":
            return tabulated(d.get("knots", ()), d.get("cdf_values", ()))
        raise ConfigurationError(f"unknown distribution kind {kind!r}")


def truncated_lognormal(
    mu: float = 0.0, sigma: float = 0.3, upper: float | None = None, lower: float = 0.0
) -> BidDistribution:
    """Log-normal prior truncated to ``[lower, upper]``.

    ``upper`` defaults to the 99th percentile of the untruncated law.
    """
    if upper is None:
        upper = math.exp(mu + sigma * float(special.ndtri(0.99)))
    return BidDistribution(
        "truncated-log-normal", mu=float(mu), sigma=float(sigma),
        upper=float(upper), lower=float(lower),
    )


def uniform(lower: float = 0.0, upper: float = 1.0) -> BidDistribution:
    return BidDistribution("uniform", upper=float(upper), lower=float(lower))


def tabulated(knots, cdf_values) -> BidDistribution:
    """Piecewise-linear CDF through ``(knots[j], cdf_values[j])``."""
    knots = tuple(float(v) for v in knots)
    cdf_values = tuple(float(v) for v in cdf_values)
    if not knots:
        raise ConfigurationError("tabulated distribution needs knots")
    return BidDistribution(
        "tabulated", upper=knots[-1], lower=knots[0], knots=knots, cdf_values=cdf_values
    )


#: bid prior used by the simulation defaults: median ~1, top ~99th percentile
DEFAULT_BIDS = truncated_lognormal(0.0, 0.3, 2.01)
