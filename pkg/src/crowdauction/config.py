"""Experiment configuration files.

Configs are JSON objects with four optional sections. Unknown keys are
rejected so typos fail loudly::

    {
      "seed": 0,
      "distribution": {"kind": "truncated-log-normal", "mu": 0, "sigma": 0.3, "upper": 2.01},
      "mechanism": {"n": 10, "k": 2, "rho": 0.1, "c": null},
      "simulation": {"n_values": [10, 100], "rhos": [0.1, 0.5],
                     "k_grid": [0, 1, 2, 4, 8, "inf"], "repeats": 100,
                     "quantiles": [0.1, ..., 0.9], "gammas": [0, 1, 2, 3, 4, 5],
                     "probe_x_max": 100, "probe_beta": 0.95},
      "verify": {"trials": 100, "k_grid": [...], "s_values": [-0.5, -0.25],
                 "n": 10, "rho": 0.1}
    }

``k = inf`` is written as the string ``"inf"``. The config hash is the
SHA-256 of the canonical serialisation (sorted keys, no whitespace) of the
fully populated config, so two files that differ only in defaults left
implicit hash the same.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from .allocation import K_INF, parse_k
from .distributions import DEFAULT_BIDS, BidDistribution
from .errors import ConfigurationError
from .simulation import SimulationConfig


def _k_out(k):
    return "inf" if k is K_INF else float(k)


def _k_list(values, name: str) -> tuple:
    try:
        out = tuple(parse_k(v) for v in values)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{name}: {exc}") from None
    if not out:
        raise ConfigurationError(f"{name} must not be empty")
    return out


def _floats(values, name: str) -> tuple[float, ...]:
    try:
        out = tuple(float(v) for v in values)
    except (TypeError, ValueError):
        raise ConfigurationError(f"{name} must be a list of numbers") from None
    if not out:
        raise ConfigurationError(f"{name} must not be empty")
    return out


def _check_keys(section: dict, allowed, name: str) -> None:
    if not isinstance(section, dict):
        raise ConfigurationError(f"section {name!r} must be an object")
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigurationError(f"unknown keys in {name!r}: {sorted(unknown)}")


@dataclass(frozen=True)
class MechanismParams:
    n: int = 10
    k: Any = 2.0
    rho: float = 0.1
    c: float | None = None  # overrides 100 * n * rho when given

    def work(self, cap_scale: float = 100.0) -> float:
        return float(self.c) if self.c is not None else cap_scale * self.n * self.rho


@dataclass(frozen=True)
class VerifyParams:
    trials: int = 100
    k_grid: tuple = (0.0, 1.0, 2.0, 4.0, 8.0, K_INF)
    s_values: tuple[float, ...] = (-0.5, -0.25)
    n: int = 10
    rho: float = 0.1


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    distribution: BidDistribution = DEFAULT_BIDS
    mechanism: MechanismParams = field(default_factory=MechanismParams)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    verify: VerifyParams = field(default_factory=VerifyParams)

    # -- serialisation ------------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        sim = self.simulation
        return {
            "seed": int(self.seed),
            "distribution": self.distribution.to_dict(),
            "mechanism": {
                "n": int(self.mechanism.n),
                "k": _k_out(parse_k(self.mechanism.k)),
                "rho": float(self.mechanism.rho),
                "c": None if self.mechanism.c is None else float(self.mechanism.c),
            },
            "simulation": {
                "n_values": [int(n) for n in sim.n_values],
                "rhos": [float(r) for r in sim.rhos],
                "k_grid": [_k_out(k) for k in sim.k_grid],
                "repeats": int(sim.repeats),
                "quantiles": [float(q) for q in sim.quantiles],
                "gammas": [float(g) for g in sim.gammas],
                "probe_x_max": float(sim.probe_x_max),
                "probe_beta": float(sim.probe_beta),
            },
            "verify": {
                "trials": int(self.verify.trials),
                "k_grid": [_k_out(k) for k in self.verify.k_grid],
                "s_values": [float(s) for s in self.verify.s_values],
                "n": int(self.verify.n),
                "rho": float(self.verify.rho),
            },
        }

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), allow_nan=False)

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def dump(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentConfig":
        _check_keys(data, ("seed", "distribution", "mechanism", "simulation", "verify"), "config")
        seed = data.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
            raise ConfigurationError("seed must be an integer in [0, 2**64)")
        dist = BidDistribution.from_dict(data.get("distribution", DEFAULT_BIDS.to_dict()))

        mech_d = data.get("mechanism", {})
        _check_keys(mech_d, [f.name for f in fields(MechanismParams)], "mechanism")
        mech = MechanismParams(
            n=int(mech_d.get("n", 10)),
            k=parse_k(mech_d.get("k", 2.0)),
            rho=float(mech_d.get("rho", 0.1)),
            c=None if mech_d.get("c") is None else float(mech_d["c"]),
        )
        if mech.n < 1 or not 0 < mech.rho <= 1:
            raise ConfigurationError("mechanism needs n >= 1 and rho in (0, 1]")

        sim_d = data.get("simulation", {})
        sim_keys = ("n_values", "rhos", "k_grid", "repeats", "quantiles", "gammas", "probe_x_max", "probe_beta")
        _check_keys(sim_d, sim_keys, "simulation")
        default = SimulationConfig()
        sim = SimulationConfig(
            n_values=tuple(int(n) for n in sim_d.get("n_values", default.n_values)),
            rhos=_floats(sim_d.get("rhos", default.rhos), "rhos"),
            k_grid=_k_list(sim_d.get("k_grid", default.k_grid), "k_grid"),
            repeats=int(sim_d.get("repeats", default.repeats)),
            quantiles=_floats(sim_d.get("quantiles", default.quantiles), "quantiles"),
            gammas=_floats(sim_d.get("gammas", default.gammas), "gammas"),
            probe_x_max=float(sim_d.get("probe_x_max", default.probe_x_max)),
            probe_beta=float(sim_d.get("probe_beta", default.probe_beta)),
            seed=seed,
            dist=dist,
        )

        ver_d = data.get("verify", {})
        _check_keys(ver_d, [f.name for f in fields(VerifyParams)], "verify")
        vdef = VerifyParams()
        ver = VerifyParams(
            trials=int(ver_d.get("trials", vdef.trials)),
            k_grid=_k_list(ver_d.get("k_grid", vdef.k_grid), "verify.k_grid"),
            s_values=_floats(ver_d.get("s_values", vdef.s_values), "s_values"),
            n=int(ver_d.get("n", vdef.n)),
            rho=float(ver_d.get("rho", vdef.rho)),
        )
        if ver.trials < 1 or any(s >= 0 for s in ver.s_values):
            raise ConfigurationError("verify needs trials >= 1 and negative slopes")
        return cls(seed, dist, mech, sim, ver)

    @classmethod
    def loads(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config is not valid JSON: {exc}") from None
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from None
        return cls.loads(text)
