import numpy as np
import pytest
from scipy import stats as sps
from scipy.special import betaln

from abmcalib.errors import DimensionError, ParameterRangeError
from abmcalib.regimes import (
    BetaPosterior,
    CandidateSet,
    DynamicCalibrator,
    RegimeInference,
    compute_likelihoods,
    denormalize_values,
    detect_poor_fit,
    fit_beta,
    generate_candidates,
    infer_regime_posteriors,
    initial_candidates,
    merge_regimes,
    normalize_values,
)
from abmcalib.rng import make_rng
from abmcalib.wealth import (
    DynamicSchedule,
    ValidationData,
    WealthModelConfig,
    synthetic_assignment,
    synthetic_schedule,
)


def make_validation(stats):
    stats = np.asarray(stats, dtype=float)
    names = tuple(f"s{i}" for i in range(stats.shape[0]))
    return ValidationData(stats=stats, names=names)


class TestLikelihoods:
    def test_density_peak_at_mean(self):
        mu = np.full((1, 3, 2), 10.0)
        lm = compute_likelihoods(mu, make_validation(np.full((1, 3), 10.0)))
        sd = 0.1 * 10.0
        expected = 1.0 / (np.sqrt(2 * np.pi) * sd)
        np.testing.assert_allclose(lm.per_stat, expected, rtol=1e-12)

    def test_known_density_value(self):
        # mean 10, observed 10, sd = 0.1*10 = 1 -> standard normal peak
        mu = np.full((1, 1, 1), 10.0)
        lm = compute_likelihoods(mu, make_validation([[10.0]]))
        assert lm.per_stat[0, 0, 0] == pytest.approx(0.39894, abs=1e-5)

    def test_joint_is_product(self):
        mu = np.ones((2, 1, 1))
        lm = compute_likelihoods(mu, make_validation([[1.001], [0.999]]))
        assert lm.joint[0, 0] == pytest.approx(
            lm.per_stat[0, 0, 0] * lm.per_stat[1, 0, 0], rel=1e-12
        )

    def test_product_rule_example(self):
        # two stats with densities 0.3 and 0.5 -> joint 0.15
        def observed_for(density, mean):
            sd = 0.1 * mean
            z = np.sqrt(-2.0 * np.log(density * np.sqrt(2 * np.pi) * sd))
            return mean + z * sd

        mu = np.array([[[10.0]], [[5.0]]])  # sds 1.0 and 0.5 (peaks 0.40, 0.80)
        val = np.array([[observed_for(0.3, 10.0)], [observed_for(0.5, 5.0)]])
        lm = compute_likelihoods(mu, make_validation(val))
        assert lm.joint[0, 0] == pytest.approx(0.15, rel=1e-9)

    def test_zero_mean_uses_floor(self):
        mu = np.zeros((1, 1, 1))
        lm = compute_likelihoods(mu, make_validation([[0.0]]))
        assert np.isfinite(lm.log_joint).all()
        assert lm.sim_sd[0, 0, 0] == pytest.approx(1e-6)


class TestMergeRegimes:
    def test_single_candidate_degenerate(self):
        labels = np.array([[0], [1], [0], [2]])
        merged = merge_regimes(labels)
        assert merged.n_blocks == 3
        np.testing.assert_array_equal(merged.blocks[0], [0, 2])

    def test_tuple_equality_example(self):
        labels = np.array([[1, 1], [1, 1], [2, 1], [1, 1]])
        merged = merge_regimes(labels)
        assert merged.n_blocks == 2
        np.testing.assert_array_equal(merged.blocks[0], [0, 1, 3])
        np.testing.assert_array_equal(merged.blocks[1], [2])
        assert merged.signatures == [(1, 1), (2, 1)]

    def test_all_distinct(self):
        labels = np.arange(6).reshape(6, 1)
        merged = merge_regimes(labels)
        assert merged.n_blocks == 6

    def test_partition_property_random(self):
        rng = make_rng(11)
        for _ in range(1000):
            horizon = int(rng.integers(1, 30))
            n_cand = int(rng.integers(1, 5))
            labels = rng.integers(0, 4, size=(horizon, n_cand))
            merged = merge_regimes(labels)
            assert merged.covers(horizon)
            lengths = sum(b.size for b in merged.blocks)
            assert lengths == horizon


class TestPoorFit:
    def test_constant_likelihood_is_not_poor(self):
        log_joint = np.zeros((5, 2))
        assert detect_poor_fit(log_joint, np.array([0, 1]), iteration=0) is False

    def test_threshold_arithmetic(self):
        # candidate with min 0, max 1, block values 0.2; ratio=1 -> threshold 0.5
        joint = np.array([[1e-300], [1.0], [0.2], [0.2]])
        with np.errstate(divide="ignore"):
            log_joint = np.log(joint)
        assert detect_poor_fit(log_joint, np.array([2, 3]), iteration=0) is True

    def test_block_touching_maximum_is_not_poor(self):
        joint = np.array([[0.01], [1.0], [0.2]])
        log_joint = np.log(joint)
        assert detect_poor_fit(log_joint, np.array([1, 2]), iteration=0) is False

    def test_ratio_decays_with_iteration(self):
        joint = np.array([[0.05], [1.0], [0.45]])
        log_joint = np.log(joint)
        # threshold at c=0: (0.05+1)/2 = 0.525 > 0.45 -> poor
        assert detect_poor_fit(log_joint, np.array([2]), iteration=0) is True
        # at c=20 ratio=0.9^20=0.12: (0.05+0.12)/1.12 = 0.153 < 0.45 -> fine
        assert detect_poor_fit(log_joint, np.array([2]), iteration=20) is False

    def test_requires_all_candidates(self):
        joint = np.array([[1e-6, 0.5], [1.0, 1.0], [0.2, 0.9]])
        log_joint = np.log(joint)
        assert detect_poor_fit(log_joint, np.array([2]), iteration=0) is False


def beta_grid_mle(values, weights, grid=None):
    """Brute-force weighted MLE over an (alpha, beta) grid."""
    if grid is None:
        grid = np.linspace(0.05, 50.0, 400)
    values = np.asarray(values)
    weights = np.asarray(weights) / np.sum(weights)
    s_lx = float(np.dot(weights, np.log(values)))
    s_l1x = float(np.dot(weights, np.log1p(-values)))
    best, best_ll = None, -np.inf
    for a in grid:
        ll = (a - 1.0) * s_lx + (grid - 1.0) * s_l1x - betaln(a, grid)
        j = int(np.argmax(ll))
        if ll[j] > best_ll:
            best_ll, best = ll[j], (a, grid[j])
    return best, best_ll


class TestFitBeta:
    def test_symmetric_values_give_alpha_equals_beta(self):
        post = fit_beta(np.array([0.2, 0.5, 0.8]), np.full(3, 1 / 3))
        assert post.alpha == pytest.approx(post.beta, rel=1e-6)
        assert post.mean == pytest.approx(0.5, abs=1e-6)

    def test_against_grid_search_oracle(self):
        values = np.array([0.2, 0.5, 0.8])
        weights = np.full(3, 1 / 3)
        (ga, gb), gll = beta_grid_mle(values, weights)
        post = fit_beta(values, weights)
        s_lx = np.mean(np.log(values))
        s_l1x = np.mean(np.log1p(-values))
        fit_ll = (post.alpha - 1) * s_lx + (post.beta - 1) * s_l1x - betaln(post.alpha, post.beta)
        assert fit_ll >= gll - 1e-6
        assert post.alpha == pytest.approx(ga, abs=0.2)
        assert post.beta == pytest.approx(gb, abs=0.2)

    def test_point_mass_weight(self):
        post = fit_beta(np.array([0.2, 0.5, 0.8]), np.array([1.0, 0.0, 0.0]))
        assert post.mean == pytest.approx(0.2, abs=1e-3)

    def test_degenerate_variance_falls_back(self):
        post = fit_beta(np.full(5, 0.37), np.full(5, 0.2))
        assert post.mean == pytest.approx(0.37, abs=1e-3)

    def test_mean_within_value_span(self):
        rng = make_rng(3)
        for _ in range(50):
            x = rng.uniform(0.05, 0.95, 12)
            w = rng.uniform(0, 1, 12)
            post = fit_beta(x, w)
            assert x.min() - 1e-9 <= post.mean <= x.max() + 1e-9

    def test_uniform_grid_gives_unit_shape(self):
        x = (np.arange(150) + 0.5) / 150.0
        post = fit_beta(np.clip(x, 1e-4, 1 - 1e-4), np.full(150, 1 / 150))
        assert 0.8 <= post.alpha <= 1.25
        assert 0.8 <= post.beta <= 1.25

    def test_input_validation(self):
        with pytest.raises(ParameterRangeError):
            fit_beta(np.array([0.0, 0.5]), np.array([0.5, 0.5]))
        with pytest.raises(ParameterRangeError):
            fit_beta(np.array([0.3, 0.5]), np.array([-1.0, 2.0]))
        with pytest.raises(DimensionError):
            fit_beta(np.array([0.3]), np.array([0.5, 0.5]))


class TestNormalization:
    def test_round_trip(self):
        rng = make_rng(9)
        for _ in range(100):
            lo, width = rng.uniform(-5, 5), rng.uniform(0.1, 10)
            vals = rng.uniform(lo, lo + width, 7)
            unit = normalize_values(vals, lo, lo + width)
            back = denormalize_values(unit, lo, lo + width)
            np.testing.assert_allclose(back, vals, atol=1e-12)

    def test_affine_example(self):
        assert denormalize_values(np.array([0.5]), 0.0, 2.0)[0] == pytest.approx(1.0)

    def test_degenerate_range(self):
        with pytest.raises(ParameterRangeError):
            normalize_values(np.array([1.0]), 2.0, 2.0)


def constant_candidates(levels, horizon=8, ranges=((0.0, 2.0),)):
    ranges = np.asarray(ranges, dtype=float)
    schedules = [
        DynamicSchedule(np.full((1, horizon), lv), ranges.copy()) for lv in levels
    ]
    return CandidateSet(schedules, 0)


def single_block_inference(posterior, horizon, n_candidates, poor=False):
    labels = np.zeros((horizon, n_candidates), dtype=int)
    merged = merge_regimes(labels)
    return RegimeInference(merged, [[posterior]], [poor], labels)


class TestGeneration:
    def test_mode_selection_values(self):
        # posterior with mean 0.5, sd 0.1 -> normalized {0.4, 0.5, 0.6}
        post = BetaPosterior(12.0, 12.0)
        assert post.mean == pytest.approx(0.5)
        assert post.sd == pytest.approx(0.1)
        inference = single_block_inference(post, horizon=4, n_candidates=3)
        out = generate_candidates(inference, np.array([[0.0, 1.0]]), 3, 4,
                                  "mode-selection", seed=0)
        levels = sorted(s.values[0, 0] for s in out.schedules)
        np.testing.assert_allclose(levels, [0.4, 0.5, 0.6], atol=1e-12)

    def test_mode_selection_deterministic(self):
        post = BetaPosterior(3.0, 5.0)
        inference = single_block_inference(post, 5, 3)
        a = generate_candidates(inference, np.array([[0.0, 2.0]]), 3, 5, "mode-selection", 1)
        b = generate_candidates(inference, np.array([[0.0, 2.0]]), 3, 5, "mode-selection", 2)
        for s, t in zip(a.schedules, b.schedules):
            np.testing.assert_array_equal(s.values, t.values)

    def test_by_regime_constant_within_block(self):
        post = BetaPosterior(2.0, 2.0)
        inference = single_block_inference(post, 10, 3)
        out = generate_candidates(inference, np.array([[0.0, 2.0]]), 3, 10, "by-regime", 7)
        for s in out.schedules:
            assert np.unique(s.values[0]).size == 1

    def test_by_time_varies_within_block(self):
        post = BetaPosterior(2.0, 2.0)
        inference = single_block_inference(post, 50, 2)
        out = generate_candidates(inference, np.array([[0.0, 2.0]]), 2, 50, "by-time", 7)
        assert np.unique(out.schedules[0].values[0]).size > 1

    def test_denormalization_range(self):
        post = BetaPosterior(1.5, 4.0)
        inference = single_block_inference(post, 20, 3)
        out = generate_candidates(inference, np.array([[0.5, 1.5]]), 3, 20, "by-time", 3)
        for s in out.schedules:
            assert np.all(s.values >= 0.5) and np.all(s.values <= 1.5)

    def test_poor_fit_uniform_draws_ks(self):
        # Beta fitted under the uniform override on an even grid is ~Beta(1,1);
        # 10k by-time draws from it pass a KS test against U(0,1)
        x = np.clip((np.arange(200) + 0.5) / 200.0, 1e-4, 1 - 1e-4)
        post = fit_beta(x, np.full(200, 1 / 200))
        inference = single_block_inference(post, 5000, 2, poor=True)
        out = generate_candidates(inference, np.array([[0.0, 1.0]]), 2, 5000, "by-time", 123)
        draws = np.concatenate([s.values[0] for s in out.schedules])
        stat = sps.kstest(draws, "uniform").statistic
        assert stat < 0.02

    def test_unknown_rule(self):
        post = BetaPosterior(1.0, 1.0)
        inference = single_block_inference(post, 3, 2)
        with pytest.raises(ParameterRangeError):
            generate_candidates(inference, np.array([[0.0, 1.0]]), 2, 3, "bogus", 0)


class TestInferencePipeline:
    def test_posteriors_cover_blocks_and_params(self):
        cands = constant_candidates([0.4, 1.0, 1.6], horizon=6)
        sim_mean = np.ones((2, 6, 3))
        sim_mean[:, 3:, :] += 0.5
        lm = compute_likelihoods(sim_mean, make_validation(np.ones((2, 6))))
        labels = np.array([[0, 0, 0], [0, 0, 0], [0, 0, 0],
                           [1, 1, 1], [1, 1, 1], [1, 1, 1]])
        inference = infer_regime_posteriors(cands, lm, labels, iteration=0)
        assert len(inference.posteriors) == inference.merged.n_blocks
        assert all(len(p) == 1 for p in inference.posteriors)

    def test_likelihood_weighting_pulls_toward_best_candidate(self):
        # validation matches candidate 2 exactly: weights concentrate there
        levels = [0.2, 1.0, 1.8]
        cands = constant_candidates(levels, horizon=10)
        sim_mean = np.stack([np.full((2, 10), lv) for lv in levels], axis=2)
        lm = compute_likelihoods(sim_mean, make_validation(np.full((2, 10), 1.8)))
        labels = np.zeros((10, 3), dtype=int)
        inference = infer_regime_posteriors(cands, lm, labels, iteration=30)
        post = inference.posteriors[0][0]
        assert not inference.poor_fit[0]
        assert post.mean == pytest.approx(1.8 / 2.0, abs=0.02)


class TestInitialCandidates:
    def test_random_within_range(self):
        cands = initial_candidates(np.array([[0.0, 2.0]]), 3, 12, seed=5)
        for s in cands.schedules:
            assert np.unique(s.values[0]).size == 1
            assert 0.0 <= s.values[0, 0] <= 2.0

    def test_spread_levels(self):
        cands = initial_candidates(np.array([[0.0, 2.0]]), 3, 12, seed=5, kind="spread")
        levels = [s.values[0, 0] for s in cands.schedules]
        np.testing.assert_allclose(levels, [0.5, 1.0, 1.5])


class TestDynamicCalibratorStep:
    def make_calibrator(self, rule="mode-selection", seed=77):
        cfg = WealthModelConfig(grid_width=12, grid_height=12, num_agents=30, horizon=16)
        sch = synthetic_schedule(cfg.horizon, period=4)
        het = synthetic_assignment()
        from abmcalib.wealth import generate_validation

        val = generate_validation(cfg, sch, het, replications=5, master_seed=1)
        return DynamicCalibrator(cfg, val, n_replications=3, n_regimes=2,
                                 rule=rule, master_seed=seed), het, sch

    def test_step_emits_schedules_in_range(self):
        cal, het, _ = self.make_calibrator()
        cands = initial_candidates(np.array([[0.0, 2.0]]), 3, 16, seed=1)
        out = cal.step(cands, het, iteration=0)
        assert out.next_candidates.n_candidates == 3
        for s in out.next_candidates.schedules:
            assert np.all(s.values >= 0.0) and np.all(s.values <= 2.0)
        assert out.neg_log_lik.shape == (3,)
        assert out.sim_means.shape == (4, 16, 3)

    def test_step_deterministic(self):
        cal, het, _ = self.make_calibrator()
        cands = initial_candidates(np.array([[0.0, 2.0]]), 3, 16, seed=1)
        a = cal.step(cands, het, iteration=0)
        b = cal.step(cands, het, iteration=0)
        for s, t in zip(a.next_candidates.schedules, b.next_candidates.schedules):
            np.testing.assert_array_equal(s.values, t.values)
        np.testing.assert_array_equal(a.neg_log_lik, b.neg_log_lik)

    def test_recovery_concentrates_on_generating_candidate(self):
        # Controlled recovery: a stationary synthetic response maps each
        # candidate level to summary traces; validation equals candidate 0's
        # response plus small noise.  Candidate 0's likelihood then dominates
        # and the beta mean on well-fitted regimes lands near its value.
        horizon, n_cand = 40, 3
        ranges = np.array([[0.0, 2.0]])

        def response(level, rng=None):
            base = np.stack([
                np.full(horizon, 10.0 + 8.0 * level),
                np.full(horizon, 5.0 + 5.0 * level),
            ])
            if rng is not None:
                base = base * (1.0 + 0.01 * rng.standard_normal(base.shape))
            return base

        gaps = []
        for seed in range(10):
            rng = make_rng(seed)
            levels = rng.uniform(0.1, 1.9, n_cand)
            cands = constant_candidates(levels, horizon=horizon)
            sim_mean = np.stack([response(lv, rng) for lv in levels], axis=2)
            val = make_validation(response(levels[0], rng))
            lm = compute_likelihoods(sim_mean, val)

            from abmcalib.hmm import fit_hmm_group

            deviations = [(sim_mean[:, :, i] - val.stats).T for i in range(n_cand)]
            models = fit_hmm_group(deviations, 2, seed + 500)
            labelings = np.stack([m.labels_ for m in models], axis=1)
            inference = infer_regime_posteriors(cands, lm, labelings, iteration=30)
            target_unit = levels[0] / 2.0
            for post, poor in zip(inference.posteriors, inference.poor_fit):
                if not poor:
                    gaps.append(abs(post[0].mean - target_unit))
        assert len(gaps) >= 10, f"expected well-fitted regimes, got {len(gaps)}"
        assert np.mean(gaps) < 0.1
