"""Two-stage auction: stage-1 outcomes, settlement and worker utility."""

import warnings

import numpy as np
import pytest
from scipy import integrate as si

from crowdauction.allocation import K_INF
from crowdauction.distributions import DEFAULT_BIDS, tabulated
from crowdauction.errors import ConfigurationError, ContractWarning, DomainError
from crowdauction.mechanism import (
    BidContext,
    WorkerProfile,
    WorkSubmission,
    draw_alpha,
    run_stage1,
    run_stage2,
    utility_from_outcome,
    worker_utility,
)
from crowdauction.strategy import OmegaSpec


def random_context(rng, k, n=6, rho=0.3):
    bids = DEFAULT_BIDS.sample(rng, n)
    caps = 100 * rng.lognormal(0, 0.3, n)
    beta = rng.uniform(0.9, 1.0)
    profile = WorkerProfile(v=float(bids[0] * beta), x_max=float(caps[0]), beta=float(beta))
    return profile, BidContext(bids[1:], caps[1:], k, rho * caps.sum(), DEFAULT_BIDS)


class TestStage1:
    @pytest.mark.parametrize("k", [0.0, 2.0, K_INF])
    def test_single_worker(self, k):
        res = run_stage1([1.0], [5.0], k, 3.0, DEFAULT_BIDS)
        assert res.x[0] == pytest.approx(3.0)
        assert res.p[0] == pytest.approx(3 * DEFAULT_BIDS.upper, rel=1e-12)

    def test_symmetric_pair(self):
        res = run_stage1([1.2, 1.2], [50, 50], 0.0, 40, DEFAULT_BIDS)
        assert res.x[0] == res.x[1] == pytest.approx(20.0)
        assert res.p[0] == pytest.approx(res.p[1], rel=1e-14)

    def test_irregular_prior_rejected(self):
        bumpy = tabulated([0, 1, 2, 3], [0, 0.5, 0.5, 1.0])
        with pytest.raises(ConfigurationError):
            run_stage1([1.0, 2.0], [5, 5], 2.0, 3, bumpy)

    def test_submission_count_checked(self):
        res = run_stage1([1.0, 1.5], [5, 5], 2.0, 3, DEFAULT_BIDS)
        with pytest.raises(DomainError):
            run_stage2(res, [WorkSubmission(1.0)])


class TestStage2:
    @pytest.fixture
    def stage1(self):
        return run_stage1([0.9, 1.3], [40, 40], 2.0, 30, DEFAULT_BIDS)

    def test_perfect_work(self, stage1):
        rec = run_stage2(stage1, [WorkSubmission(x) for x in stage1.x])
        np.testing.assert_allclose(rec.p_realized, stage1.p)

    def test_half_work(self, stage1):
        rec = run_stage2(stage1, [WorkSubmission(x / 2) for x in stage1.x])
        np.testing.assert_allclose(rec.p_realized, stage1.p / 2)

    def test_excess_work_not_assessed(self, stage1):
        rec = run_stage2(stage1, [WorkSubmission(2 * x) for x in stage1.x])
        np.testing.assert_allclose(rec.x_accepted, stage1.x)
        np.testing.assert_allclose(rec.p_realized, stage1.p)

    def test_partial_quality(self, stage1):
        rec = run_stage2(stage1, [WorkSubmission(x, alpha=0.8) for x in stage1.x])
        np.testing.assert_allclose(rec.p_realized, 0.8 * stage1.p)

    def test_utilities_with_profiles(self, stage1):
        profiles = [WorkerProfile(0.8, 100, 0.9), None]
        subs = [WorkSubmission(stage1.x[0]), WorkSubmission(stage1.x[1])]
        rec = run_stage2(stage1, subs, profiles)
        assert rec.utility[0] == pytest.approx(stage1.p[0] - stage1.x[0] * 0.8)
        assert np.isnan(rec.utility[1])

    def test_over_capacity_forfeits(self, stage1):
        profiles = [WorkerProfile(0.8, 1.0, 0.9), WorkerProfile(1.0, 100, 1.0)]
        rec = run_stage2(stage1, [WorkSubmission(x) for x in stage1.x], profiles)
        assert rec.utility[0] == 0.0

    def test_draw_alpha(self):
        beta = np.array([0.9, 1.0, 0.95])
        np.testing.assert_array_equal(draw_alpha(beta), beta)
        draws = np.array([draw_alpha(beta, np.random.default_rng(i), 50.0) for i in range(2000)])
        np.testing.assert_allclose(draws.mean(axis=0), beta, atol=0.01)
        assert np.all(draws[:, 1] == 1.0)

    def test_submission_validation(self):
        with pytest.raises(DomainError):
            WorkSubmission(-1.0)
        with pytest.raises(DomainError):
            WorkSubmission(1.0, alpha=1.5)
        with pytest.raises(DomainError):
            WorkerProfile(1.0, 10, 0.0)


class TestUtility:
    def test_strict_form_zero_beyond_capacity(self):
        prof = WorkerProfile(1.0, 10.0, 0.95)
        assert utility_from_outcome(prof, 12.0, 30.0, 11.0) == 0.0

    def test_no_work_no_utility(self):
        prof = WorkerProfile(1.0, 10.0, 0.95)
        assert utility_from_outcome(prof, 5.0, 12.0, 0.0) == 0.0
        assert utility_from_outcome(prof, 0.0, 0.0, 0.0) == 0.0

    def test_contract_warning_for_shallow_omega(self):
        prof = WorkerProfile(1.0, 10.0, 0.95)
        with pytest.warns(ContractWarning):
            utility_from_outcome(prof, 12.0, 30.0, 12.0, OmegaSpec(-0.5))
        with warnings.catch_warnings():
            warnings.simplefilter("error", ContractWarning)
            utility_from_outcome(prof, 12.0, 30.0, 12.0, OmegaSpec(-1.5))

    @pytest.mark.parametrize("k", [0.0, 1.0, 2.0, 8.0, K_INF])
    def test_truthful_utility_is_beta_times_rent(self, rng, k):
        for _ in range(4):
            prof, ctx = random_context(rng, k)
            b = prof.truthful_bid
            x, _ = ctx.outcome(b, prof.x_max)
            u = worker_utility(prof, b, prof.x_max, x, ctx)
            curve = lambda s: float(ctx.allocation_curve(prof.x_max, [s])[0])
            points = list(ctx.other_bids) if k is K_INF else None
            rent, _ = si.quad(curve, b, DEFAULT_BIDS.upper, points=points, limit=500, epsabs=1e-11)
            assert u == pytest.approx(prof.beta * rent, rel=1e-6, abs=1e-9)
            assert u >= -1e-9

    @pytest.mark.parametrize("k", [0.0, 2.0, 8.0, K_INF])
    def test_submitting_requested_work_is_best(self, rng, k):
        for _ in range(5):
            prof, ctx = random_context(rng, k)
            b = prof.truthful_bid
            x, p = ctx.outcome(b, prof.x_max)
            target = min(x, prof.x_max)
            grid = np.unique(np.concatenate([np.linspace(0, 1.5 * max(x, 1.0), 61), [target]]))
            u = np.array([utility_from_outcome(prof, x, p, xh) for xh in grid])
            best = utility_from_outcome(prof, x, p, target)
            assert u.max() <= best + 1e-9 * max(1.0, abs(best))

    @pytest.mark.parametrize("k", [0.0, 2.0, 8.0])
    def test_truthful_bid_is_best_on_grid(self, rng, k):
        for _ in range(5):
            prof, ctx = random_context(rng, k)
            big = WorkerProfile(prof.v, 1e4, prof.beta)
            grid = np.linspace(0.3, DEFAULT_BIDS.upper, 80)
            sched = ctx.outcomes(grid, np.full(grid.size, big.x_max))
            u = [utility_from_outcome(big, x, p, x) for x, p in zip(sched.x, sched.p)]
            x0, p0 = ctx.outcome(big.truthful_bid, big.x_max)
            nominal = utility_from_outcome(big, x0, p0, x0)
            # ties are possible (k = 0 gives a flat allocation), so compare values
            assert max(u) <= nominal + 1e-9 * max(1.0, abs(nominal))
