"""Acceptance suite: one test class per criterion.

Each criterion prints a PASS/FAIL line when run with ``-s``; the terminal
summary lists all of them after every run (see ``conftest.py``).
"""

import json
import time

import numpy as np
import pytest

from conftest import random_instance
from crowdauction.allocation import (
    K_INF,
    allocate,
    oracle_allocate,
    solve,
    solve_rows,
    total_virtual_cost,
)
from crowdauction.cli import main
from crowdauction.distributions import DEFAULT_BIDS
from crowdauction.mechanism import BidContext, WorkerProfile, utility_from_outcome
from crowdauction.payment import variant_payments
from crowdauction.simulation import SimulationConfig, run_simulation, stream
from crowdauction.strategy import (
    COORDINATES,
    OmegaSpec,
    departure_study,
    nominal_point,
    sample_trial,
    search_best_response,
)

FINITE_K = (0.0, 1.0, 2.0, 4.0, 8.0)
K_GRID = FINITE_K + (K_INF,)


def announce(record_property, number, ok, detail):
    record_property("detail", detail)
    print(f"\ncriterion {number:2d} {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def acceptance_rng(number):
    return stream(20240611, "acceptance", number)


@pytest.mark.criterion(1, "bid prior percentiles")
def test_percentiles(record_property):
    start = time.perf_counter()
    q = DEFAULT_BIDS.quantile(np.array([0.05, 0.25, 0.5, 0.75, 0.95]))
    elapsed = time.perf_counter() - start
    target = np.array([0.61, 0.81, 1.00, 1.22, 1.60])
    worst = float(np.max(np.abs(q - target)))
    announce(record_property, 1, worst <= 0.005 and elapsed < 1.0,
             f"max |q - target| = {worst:.4f} (tol 0.005), {elapsed * 1e3:.1f} ms")


@pytest.mark.criterion(2, "solver matches exhaustive oracle")
def test_oracle_equivalence(record_property):
    rng = acceptance_rng(2)
    start = time.perf_counter()
    worst_obj = worst_x = 0.0
    for t in range(500):
        inst = random_instance(rng, k=FINITE_K[t % 5])
        a, o = allocate(inst), oracle_allocate(inst)
        worst_obj = max(worst_obj, abs(a.objective - o.objective) / max(abs(o.objective), 1e-300))
        worst_x = max(worst_x, float(np.max(np.abs(a.x - o.x))))
    elapsed = time.perf_counter() - start
    announce(record_property, 2, worst_obj <= 1e-8 and worst_x <= 1e-6 and elapsed < 30,
             f"500 instances: objective rel {worst_obj:.1e}, x abs {worst_x:.1e}, {elapsed:.1f} s")


@pytest.mark.criterion(3, "individual rationality")
def test_individual_rationality(record_property):
    rng = acceptance_rng(3)
    start = time.perf_counter()
    worst = np.inf
    for t in range(1000):
        inst = random_instance(rng, k=K_GRID[t % 6])
        beta = rng.uniform(0.9, 1.0)
        prof = WorkerProfile(v=float(inst.bids[0] * beta), x_max=float(inst.capacities[0]), beta=float(beta))
        ctx = BidContext(inst.bids[1:], inst.capacities[1:], inst.k, inst.c, DEFAULT_BIDS)
        x, p = ctx.outcome(min(prof.truthful_bid, DEFAULT_BIDS.upper), prof.x_max)
        worst = min(worst, utility_from_outcome(prof, x, p, x))
    elapsed = time.perf_counter() - start
    announce(record_property, 3, worst >= -1e-9 and elapsed < 60,
             f"1000 truthful workers: min utility {worst:.3g}, {elapsed:.1f} s")


@pytest.mark.criterion(4, "allocation non-increasing in own bid")
def test_allocation_monotone(record_property):
    rng = acceptance_rng(4)
    violations = 0
    grid = np.linspace(DEFAULT_BIDS.lower + 1e-6, DEFAULT_BIDS.upper, 50)
    for t in range(100):
        inst = random_instance(rng, k=K_GRID[t % 6])
        ctx = BidContext(inst.bids[1:], inst.capacities[1:], inst.k, inst.c, DEFAULT_BIDS)
        curve = ctx.allocation_curve(inst.capacities[0], grid)
        violations += int(np.any(np.diff(curve) > 1e-12 * max(1.0, inst.c)))
    announce(record_property, 4, violations == 0, f"100 contexts x 50 bids: {violations} non-monotone curves")


def sign_changes(diff, scale):
    signs = np.sign(diff[np.abs(diff) > 1e-10 * scale])
    return int(np.count_nonzero(np.diff(signs))), (signs[0] if signs.size else 0.0)


@pytest.mark.criterion(5, "single crossing of work shares")
def test_single_crossing(record_property):
    rng = acceptance_rng(5)
    bad = 0
    for _ in range(500):
        inst = random_instance(rng)
        order = np.argsort(inst.bids, kind="stable")
        shares = [solve(inst.with_k(k)).x[order] / inst.c for k in FINITE_K]
        for lo, hi in zip(shares, shares[1:]):
            changes, first = sign_changes(lo - hi, 1.0)
            # low bidders gain share as k grows, so the difference starts negative
            bad += int(changes > 1 or (changes == 1 and first > 0))
    announce(record_property, 5, bad == 0, f"500 instances x 4 k pairs: {bad} with more than one crossing")


@pytest.mark.criterion(6, "total virtual cost non-increasing in k")
def test_cost_monotone(record_property):
    rng = acceptance_rng(6)
    bad = 0
    for _ in range(500):
        inst = random_instance(rng)
        costs = [total_virtual_cost(inst, solve(inst.with_k(k))) for k in K_GRID]
        bad += int(any(b > a * (1 + 1e-9) for a, b in zip(costs, costs[1:])))
    announce(record_property, 6, bad == 0, f"500 instances over k in 0,1,2,4,8,inf: {bad} increases")


@pytest.mark.criterion(7, "greedy limit is the large-k solution and cheapest")
def test_k_inf_optimal(record_property):
    rng = acceptance_rng(7)
    worst = 0.0
    undercut = 0
    for _ in range(200):
        inst = random_instance(rng, k=K_INF)
        greedy = solve(inst)
        worst = max(worst, float(np.max(np.abs(allocate(inst.with_k(1e6)).x - greedy.x))))
        g = total_virtual_cost(inst, greedy)
        undercut += int(any(total_virtual_cost(inst, solve(inst.with_k(k))) < g * (1 - 1e-12) for k in FINITE_K))
    announce(record_property, 7, worst <= 1e-4 and undercut == 0,
             f"200 instances: max |x(1e6) - x(inf)| = {worst:.1e}, {undercut} finite k cheaper")


@pytest.mark.criterion(8, "expected payment equals expected virtual cost")
def test_payment_identity(record_property):
    rng = acceptance_rng(8)
    draws, n, c, k = 10_000, 10, 100.0, 2.0
    start = time.perf_counter()
    bids = DEFAULT_BIDS.sample(rng, draws * n).reshape(draws, n)
    caps = 100.0 * rng.lognormal(0.0, 0.3, (draws, n))
    delta = DEFAULT_BIDS.virtual_welfare(bids)
    cost = (solve_rows(delta, caps, c, k) * delta).sum(axis=1)
    paid = np.zeros(draws)
    for i in range(n):
        others = np.delete(np.arange(n), i)
        for lo in range(0, draws, 2000):
            rows = slice(lo, lo + 2000)
            paid[rows] += variant_payments(
                bids[rows, i], caps[rows, i], bids[rows][:, others], caps[rows][:, others], k, c, DEFAULT_BIDS
            ).p
    gap = abs(paid.mean() - cost.mean()) / cost.mean()
    elapsed = time.perf_counter() - start
    announce(record_property, 8, gap < 0.02,
             f"10^4 draws: mean pay {paid.mean():.3f}, mean virtual cost {cost.mean():.3f}, "
             f"rel gap {gap:.1e}, {elapsed:.0f} s")


# ---------------------------------------------------------------------------
# criterion 9: best-response search


@pytest.fixture(scope="module")
def departure_reports():
    return departure_study(n_trials=100, k_grid=K_GRID, s_values=(-0.5, -0.25), seed=9)


@pytest.mark.criterion(9, "best-response search and departure trends")
class TestDominantStrategy:
    def test_no_improvement_when_cap_holds(self, record_property):
        slopes = (-1.0, -1.5, -2.0)
        worst = 0.0
        moved = 0
        for t in range(200):
            trial = sample_trial(stream(9, "cap-holds", t), k=K_GRID[t % 6])
            omega = OmegaSpec(slopes[t % 3])
            nominal = nominal_point(trial.profile, trial.context, omega)
            found = search_best_response(trial.profile, trial.context, omega)
            worst = max(worst, (found.utility - nominal.utility) / max(1.0, abs(nominal.utility)))
            moved += int((found.b, found.x_max_hat) != (nominal.b, nominal.x_max_hat))
        announce(record_property, 9, worst <= 1e-9 and moved == 0,
                 f"200 trials with s <= -1: max relative gain {worst:.1e}, {moved} moved")

    def test_submitted_work_agrees(self, departure_reports, record_property):
        lowest = min(r.coordinates["x_hat"].agreement for r in departure_reports)
        announce(record_property, 9, lowest >= 0.99,
                 f"x_hat agreement >= {lowest:.2f} in all {len(departure_reports)} cells (100 trials each)")

    def test_capacity_agreement_falls_with_k(self, departure_reports, record_property):
        table = {(r.k, r.slope): r.coordinates["x_max_hat"].agreement for r in departure_reports}
        details, ok = [], True
        for s in (-0.5, -0.25):
            seq = [table[(k, s)] for k in K_GRID]
            # allow sampling noise between neighbours: two binomial standard errors
            slack = 2 * np.sqrt(0.25 / 100)
            ok &= seq[-1] < seq[0] and all(b <= a + slack for a, b in zip(seq, seq[1:]))
            details.append(f"s={s}: " + " ".join(f"{a:.2f}" for a in seq))
        announce(record_property, 9, ok, "x_max_hat agreement over k=0..inf; " + "; ".join(details))

    def test_report_fields(self, departure_reports):
        for r in departure_reports:
            for name in COORDINATES:
                d = r.coordinates[name]
                assert 0 <= d.agreement <= 1
                assert np.isnan(d.mean_rel_diff) == (d.agreement == 1.0)


# ---------------------------------------------------------------------------
# criterion 10: figure shapes


@pytest.fixture(scope="module")
def default_tables():
    start = time.perf_counter()
    tables = run_simulation(SimulationConfig())
    return tables, time.perf_counter() - start


def by(rows, keys):
    out = {}
    for row in rows:
        out.setdefault(tuple(row[k] for k in keys), []).append(row)
    return out


@pytest.mark.criterion(10, "figure shapes at desk scale")
class TestFigureShapes:
    def test_roi(self, default_tables, record_property):
        tables, elapsed = default_tables
        rows = tables.fig2_roi
        in_v = all(
            np.all(np.diff([r["roi_smoothed"] for r in sorted(g, key=lambda r: r["v1"])]) <= 1e-12)
            for g in by(rows, ("n", "rho", "gamma", "k")).values()
        )
        in_gamma = all(
            np.all(np.diff([r["roi_raw"] for r in sorted(g, key=lambda r: r["gamma"])]) <= 1e-12)
            for g in by(rows, ("n", "rho", "k", "v1")).values()
        )
        free = all(r["roi_raw"] >= -1e-12 for r in rows if r["gamma"] == 0)
        announce(record_property, 10, in_v and in_gamma and free and elapsed < 600,
                 f"ROI non-increasing in v1 ({in_v}) and gamma ({in_gamma}), "
                 f"non-negative at gamma=0 ({free}); simulation {elapsed:.0f} s")

    def test_participation(self, default_tables, record_property):
        rows = default_tables[0].fig3_participation
        k_order = [str(k) for k in K_GRID[:-1]] + ["inf"]
        in_k = all(
            np.all(np.diff([r["participation"] for r in sorted(g, key=lambda r: k_order.index(r["k"]))]) <= 1e-12)
            for g in by(rows, ("n", "rho", "gamma")).values()
        )
        in_rho = all(
            np.all(np.diff([r["participation"] for r in sorted(g, key=lambda r: r["rho"])]) >= -1e-12)
            for g in by(rows, ("n", "gamma", "k")).values()
        )
        announce(record_property, 10, in_k and in_rho,
                 f"participation non-increasing in k ({in_k}), non-decreasing in rho ({in_rho})")

    def test_inflation(self, default_tables, record_property):
        rows = default_tables[0].fig4_inflation
        ok = True
        for g in by(rows, ("n", "rho")).values():
            seq = [r["inflation"] for r in g]  # rows are written in k-grid order
            ok &= min(seq) >= 1 - 1e-12 and seq[-1] == 1.0 and np.all(np.diff(seq) <= 1e-12)
        worst = max(r["inflation"] for r in rows)
        announce(record_property, 10, ok, f"inflation >= 1, non-increasing in k, 1 at inf ({ok}); max {worst:.2f}")

    def test_tradeoff(self, default_tables, record_property):
        ok = True
        for g in by(default_tables[0].fig5_tradeoff, ("n", "rho", "gamma")).values():
            pts = sorted((r["inflation"], r["participation"]) for r in g)
            ok &= all(b[1] >= a[1] - 1e-12 for a, b in zip(pts, pts[1:]))
        announce(record_property, 10, ok, f"participation non-decreasing along the inflation axis ({ok})")


# ---------------------------------------------------------------------------
# criterion 11: determinism


@pytest.mark.criterion(11, "repeated CLI runs are byte-identical")
def test_cli_determinism(tmp_path, capsys, record_property):
    bids = tmp_path / "bids.csv"
    bids.write_text("worker,bid,capacity\n0,0.7,40\n1,1.0,60\n2,1.3,50\n3,1.9,80\n")
    config = tmp_path / "config.json"
    config.write_text(json.dumps({
        "seed": 11,
        "simulation": {"n_values": [5, 10], "rhos": [0.1, 0.5], "repeats": 6, "gammas": [0, 2]},
        "verify": {"trials": 2, "k_grid": [0, 2, "inf"]},
    }))

    def run_all(tag):
        out = tmp_path / tag
        out.mkdir()
        commands = [
            ["dist", "--out", str(out / "dist.csv")],
            ["allocate", "--bids", str(bids), "--c", "90", "--k", "inf", "--out", str(out / "alloc.csv")],
            ["pay", "--bids", str(bids), "--c", "90", "--out", str(out / "pay.csv")],
            ["auction", "--bids", str(bids), "--c", "90", "--k", "4", "--out", str(out / "auction.csv")],
            ["verify", "--config", str(config), "--out", str(out / "verify.csv")],
            ["simulate", "--config", str(config), "--out", str(out / "sim")],
        ]
        codes = [main(cmd) for cmd in commands]
        capsys.readouterr()
        files = {p.relative_to(out).as_posix(): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}
        return codes, files

    codes_a, files_a = run_all("first")
    codes_b, files_b = run_all("second")
    ok = codes_a == codes_b == [0] * 6 and files_a == files_b and len(files_a) == 10
    announce(record_property, 11, ok, f"6 subcommands run twice: {len(files_a)} files, identical={files_a == files_b}")
