"""Command-line entry point: ``crowdauction <subcommand> ...``.

Subcommands and their CSV outputs (all with a header row, columns in the
order listed):

``dist``      q, b, pdf, cdf, virtual_welfare
``allocate``  worker, x, tight, lambda  (plus a JSON summary on stderr)
``pay``       worker, bid, capacity, x, p, error
``auction``   worker, bid, capacity, x, p; with ``--submissions`` also a
              settlement file: worker, x, p, x_hat, x_accepted, p_realized, utility
``verify``    k, s, coordinate, agreement, mean_rel_diff, trials
``simulate``  fig2_roi.csv, fig3_participation.csv, fig4_inflation.csv,
              fig5_tradeoff.csv and manifest.json in ``--out``

Instance CSVs have columns ``worker, bid, capacity`` and optionally
``delta`` (virtual welfare given directly instead of derived from the bid
prior). Submission CSVs have ``worker, x_hat, alpha`` and optionally
``v, x_max, beta`` to report utilities.

Exit status: 0 success, 1 domain/configuration/infeasibility error,
2 numerical precision error, 64 usage error. Errors are reported as one
JSON line on stderr: ``{"error": <reason>, "message": <text>}``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .allocation import AuctionInstance, k_label, parse_k, solve
from .config import ExperimentConfig
from .distributions import DEFAULT_BIDS, BidDistribution, truncated_lognormal
from .errors import AuctionError, ConfigurationError, DomainError, PrecisionError
from .mechanism import WorkerProfile, WorkSubmission, run_stage1, run_stage2
from .payment import payment_schedule
from .simulation import FIG_COLUMNS, run_simulation
from .strategy import departure_study

SUBCOMMANDS = ("dist", "allocate", "pay", "auction", "verify", "simulate")
EXIT_OK, EXIT_DOMAIN, EXIT_PRECISION, EXIT_USAGE = 0, 1, 2, 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit 2, which is taken by precision errors
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# I/O helpers


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return "nan" if value != value else repr(value)
    return str(value)


def write_csv(path, columns, rows) -> None:
    """Write dict rows; ``path`` of ``None`` or ``-`` means stdout."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in columns])
    if path in (None, "-"):
        sys.stdout.write(buf.getvalue())
    else:
        Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_csv(path, required, optional=()) -> dict[str, np.ndarray]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise ConfigurationError(f"cannot read {path}: {exc}") from None
    if not rows:
        raise ConfigurationError(f"{path} has no data rows")
    header = set(rows[0])
    missing = [c for c in required if c not in header]
    if missing:
        raise ConfigurationError(f"{path} lacks columns {missing}")
    out = {}
    for col in (*required, *(c for c in optional if c in header)):
        try:
            out[col] = np.array([float(r[col]) for r in rows])
        except ValueError:
            raise ConfigurationError(f"{path}: column {col!r} must be numeric") from None
    return out


def _load_dist(args) -> BidDistribution:
    if getattr(args, "dist_config", None):
        try:
            data = json.loads(Path(args.dist_config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read distribution config: {exc}") from None
        return BidDistribution.from_dict(data.get("distribution", data))
    return DEFAULT_BIDS


def _instance(args, dist, allow_delta: bool = True) -> tuple[AuctionInstance, np.ndarray]:
    data = read_csv(args.bids, ("bid", "capacity"), ("worker", "delta"))
    workers = data.get("worker", np.arange(data["bid"].size)).astype(int)
    if "delta" in data:
        if not allow_delta:
            raise ConfigurationError("payments integrate over bids; the delta column is not allowed here")
        inst = AuctionInstance(data["bid"], data["capacity"], data["delta"], parse_k(args.k), args.c)
    else:
        inst = AuctionInstance.from_bids(data["bid"], data["capacity"], parse_k(args.k), args.c, dist)
    return inst, workers


# ---------------------------------------------------------------------------
# subcommands


def cmd_dist(args) -> None:
    if args.dist_config:
        dist = _load_dist(args)
    else:
        dist = truncated_lognormal(args.mu, args.sigma, args.upper, args.lower)
    qs = [float(q) for q in args.quantiles.split(",")]
    b = np.atleast_1d(dist.quantile(qs))
    rows = [
        dict(q=q, b=float(bi), pdf=float(dist.pdf(bi)), cdf=float(dist.cdf(bi)),
             virtual_welfare=float(dist.virtual_welfare(bi)))
        for q, bi in zip(qs, b)
    ]
    write_csv(args.out, ("q", "b", "pdf", "cdf", "virtual_welfare"), rows)
    print(json.dumps({"regular": dist.check_regularity(), **dist.to_dict()}, sort_keys=True), file=sys.stderr)


def cmd_allocate(args) -> None:
    inst, workers = _instance(args, _load_dist(args))
    res = solve(inst)
    rows = [
        dict(worker=w, x=float(x), tight=bool(t), **{"lambda": float(lam)})
        for w, x, t, lam in zip(workers, res.x, res.tight_mask, res.lam)
    ]
    write_csv(args.out, ("worker", "x", "tight", "lambda"), rows)
    summary = {"objective": res.objective, "mu": res.mu, "iterations": res.iterations, "k": k_label(inst.k)}
    print(json.dumps(summary, sort_keys=True), file=sys.stderr)


def cmd_pay(args) -> None:
    dist = _load_dist(args)
    inst, workers = _instance(args, dist, allow_delta=False)
    sched = payment_schedule(inst, dist, args.rtol)
    rows = [
        dict(worker=w, bid=float(b), capacity=float(c), x=float(x), p=float(p), error=float(e))
        for w, b, c, x, p, e in zip(workers, inst.bids, inst.capacities, sched.x, sched.p, sched.error)
    ]
    write_csv(args.out, ("worker", "bid", "capacity", "x", "p", "error"), rows)


def cmd_auction(args) -> None:
    dist = _load_dist(args)
    data = read_csv(args.bids, ("bid", "capacity"), ("worker",))
    workers = data.get("worker", np.arange(data["bid"].size)).astype(int)
    stage1 = run_stage1(data["bid"], data["capacity"], parse_k(args.k), args.c, dist)
    rows = [
        dict(worker=w, bid=float(b), capacity=float(c), x=float(x), p=float(p))
        for w, b, c, x, p in zip(workers, data["bid"], data["capacity"], stage1.x, stage1.p)
    ]
    write_csv(args.out, ("worker", "bid", "capacity", "x", "p"), rows)
    if not args.submissions:
        return
    if not args.settlement:
        raise ConfigurationError("--submissions needs --settlement for the output path")
    sub = read_csv(args.submissions, ("x_hat", "alpha"), ("worker", "v", "x_max", "beta"))
    if sub["x_hat"].size != workers.size:
        raise DomainError("one submission per stage-1 worker is required")
    submissions = [WorkSubmission(float(xh), float(a)) for xh, a in zip(sub["x_hat"], sub["alpha"])]
    profiles = None
    if all(c in sub for c in ("v", "x_max", "beta")):
        profiles = [WorkerProfile(float(v), float(m), float(b)) for v, m, b in zip(sub["v"], sub["x_max"], sub["beta"])]
    rec = run_stage2(stage1, submissions, profiles)
    cols = ("worker", "x", "p", "x_hat", "x_accepted", "p_realized", "utility")
    rows = [
        dict(worker=w, x=x, p=p, x_hat=xh, x_accepted=xa, p_realized=pr, utility=u)
        for w, x, p, xh, xa, pr, u in zip(
            workers, rec.x, rec.p, rec.x_hat, rec.x_accepted, rec.p_realized, rec.utility
        )
    ]
    write_csv(args.settlement, cols, rows)


def _config_from(args) -> ExperimentConfig:
    return ExperimentConfig.load(args.config) if getattr(args, "config", None) else ExperimentConfig()


def cmd_verify(args) -> None:
    cfg = _config_from(args)
    ver = cfg.verify
    k_grid = tuple(parse_k(k) for k in args.k_grid.split(",")) if args.k_grid else ver.k_grid
    s_values = tuple(float(s) for s in args.s_values.split(",")) if args.s_values else ver.s_values
    if any(s >= 0 for s in s_values):
        raise ConfigurationError("slopes must be negative")
    trials = args.trials if args.trials is not None else ver.trials
    seed = args.seed if args.seed is not None else cfg.seed
    reports = departure_study(
        trials, k_grid, s_values, seed=seed, n=ver.n, rho=ver.rho, dist=cfg.distribution,
        threads=args.threads,
    )
    rows = [row for rep in reports for row in rep.rows()]
    write_csv(args.out, ("k", "s", "coordinate", "agreement", "mean_rel_diff", "trials"), rows)


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def cmd_simulate(args) -> None:
    cfg = _config_from(args)
    if args.seed is not None:
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tables = run_simulation(cfg.simulation, threads=args.threads)
    files = {}
    for name, cols in FIG_COLUMNS.items():
        path = out / f"{name}.csv"
        write_csv(path, cols, getattr(tables, name))
        files[path.name] = _sha256_file(path)
    manifest = {
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "files": files,
        "seed": cfg.seed,
        "version": __version__,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# parser and dispatch


def _add_instance_flags(p: argparse.ArgumentParser, need_c: bool = True) -> None:
    p.add_argument("--bids", required=True, help="instance CSV: worker, bid, capacity[, delta]")
    p.add_argument("--k", default="2", help="equality/efficiency exponent (number or 'inf'; default 2)")
    p.add_argument("--c", type=float, required=need_c, help="total work requested")
    p.add_argument("--dist-config", help="JSON file with a bid distribution (default: built-in prior)")
    p.add_argument("--out", help="output CSV path (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="crowdauction", description="Two-stage reverse auction toolkit.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument(
        "--threads", type=int, default=os.cpu_count() or 1,
        help="upper bound on worker threads for verify/simulate (default: CPU count)",
    )
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("dist", help="quantiles, density and virtual welfare of a bid prior")
    p.add_argument("--mu", type=float, default=0.0)
    p.add_argument("--sigma", type=float, default=0.3)
    p.add_argument("--upper", type=float, default=2.01, help="support upper edge")
    p.add_argument("--lower", type=float, default=0.0, help="support lower edge")
    p.add_argument("--quantiles", default="0.05,0.25,0.5,0.75,0.95", help="comma-separated probabilities")
    p.add_argument("--dist-config", help="JSON distribution spec (overrides --mu/--sigma/...)")
    p.add_argument("--out", help="output CSV path (default: stdout)")
    p.set_defaults(func=cmd_dist)

    p = sub.add_parser("allocate", help="solve the allocation for one instance")
    _add_instance_flags(p)
    p.set_defaults(func=cmd_allocate)

    p = sub.add_parser("pay", help="maximum payments for one instance")
    _add_instance_flags(p)
    p.add_argument("--rtol", type=float, default=1e-10, help="relative quadrature tolerance")
    p.set_defaults(func=cmd_pay)

    p = sub.add_parser("auction", help="run stage 1, and stage 2 if submissions are given")
    _add_instance_flags(p)
    p.add_argument("--submissions", help="stage-2 CSV: worker, x_hat, alpha[, v, x_max, beta]")
    p.add_argument("--settlement", help="settlement CSV output path")
    p.set_defaults(func=cmd_auction)

    p = sub.add_parser("verify", help="best-response departure study")
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--k-grid", help="comma-separated k values, e.g. 0,2,inf")
    p.add_argument("--s-values", help="comma-separated negative slopes, e.g. -0.5,-0.25")
    p.add_argument("--trials", type=int, help="trials per cell (default 100)")
    p.add_argument("--seed", type=int, help="master seed (default: config seed)")
    p.add_argument("--out", help="output CSV path (default: stdout)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("simulate", help="Monte Carlo ROI, participation and cost tables")
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)
    return parser


def _first_positional(argv) -> str | None:
    skip = False
    for a in argv:
        if skip:
            skip = False
        elif a == "--threads":
            skip = True
        elif not a.startswith("-"):
            return a
    return None


def _report(reason: str, message: str) -> None:
    print(json.dumps({"error": reason, "message": message}, sort_keys=True), file=sys.stderr)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    command = _first_positional(argv)
    wants_help = any(a in ("-h", "--help", "--version") for a in argv)
    if command not in SUBCOMMANDS and not wants_help:
        parser.print_usage(sys.stderr)
        _report("usage", f"unknown or missing subcommand {command!r}; choose from {', '.join(SUBCOMMANDS)}")
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        args.func(args)
    except UsageError as exc:
        _report("usage", str(exc))
        return EXIT_USAGE
    except PrecisionError as exc:
        _report(exc.reason, str(exc))
        return EXIT_PRECISION
    except AuctionError as exc:
        _report(exc.reason, str(exc))
        return EXIT_DOMAIN
    except (ValueError, ArithmeticError) as exc:
        _report("domain", str(exc))
        return EXIT_DOMAIN
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
