import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

import oracles
from omx.adf import (ADFConfig, ADFResult, AdaptiveDetector, TrendClassifier, baseline, evaluate,
                     lag1_autocorr, score_against, volatility)
from omx.errors import InsufficientData

X = [12, 14, 55, 58, 61]


class TestVolatility:
    def test_worked_sigma(self):
        sigma, *_ = volatility(X)
        assert sigma == pytest.approx(24.74873734, abs=1e-6)
        # frozen oracle value, computed by hand from the n-1 formula
        assert sigma == pytest.approx(math.sqrt(2450 / 4), abs=1e-12)

    def test_constant(self):
        sigma, c_v, rho_v, rho_r = volatility([3, 3, 3, 3])
        assert sigma == 0.0 and rho_v == 0.0 and rho_r == 0.0

    def test_alternating_has_flat_volatility(self):
        _, _, rho_v, _ = volatility([0, 1, 0, 1, 0, 1])
        assert rho_v == 0.0

    def test_too_short(self):
        with pytest.raises(InsufficientData):
            volatility([1.0])

    def test_autocorr_matches_oracle(self):
        rng = random.Random(5)
        for _ in range(50):
            v = [rng.uniform(-5, 5) for _ in range(rng.randint(2, 15))]
            assert lag1_autocorr(v) == pytest.approx(oracles.autocorr1(v), abs=1e-9)

    def test_c_v_sign_follows_shuffle_mean(self):
        sigma, c_v, rho_v, rho_r = volatility([1, 3, 2, 8, 4, 9, 3, 7, 1, 6])
        if rho_r != 0:
            assert c_v == pytest.approx(rho_v / rho_r)


class TestBaseline:
    def test_pre_spike_history(self):
        hist = [(i * 60, v) for i, v in enumerate([12, 14, 16, 18, 15])]
        assert baseline(hist, 600) == 15.0

    def test_single_point(self):
        assert baseline([(0, 15.0)], 60) == 15.0

    def test_hour_factor(self):
        factors = [1.0] * 24
        factors[1] = 2.0
        cfg = ADFConfig(hour_factors=factors)
        hist = [(3600 + i, v) for i, v in enumerate([10, 20, 15])]
        assert baseline(hist, 3700, cfg) == 30.0

    def test_only_strictly_before(self):
        hist = [(0, 1.0), (10, 3.0), (20, 1000.0)]
        assert baseline(hist, 20) == 2.0

    def test_window_cap(self):
        hist = [(i, float(i)) for i in range(100)]
        assert baseline(hist, 100, ADFConfig(baseline_window=4)) == pytest.approx(97.5)

    def test_no_history(self):
        with pytest.raises(InsufficientData):
            baseline([(50, 1.0)], 50)


class TestScore:
    def test_worked_example(self):
        r = score_against(X, 58, 15, ADFConfig(theta=10))
        assert r.deviation == 43
        assert r.w1 == pytest.approx(0.712219, abs=1e-5)
        assert r.state_value == pytest.approx(1.73746, abs=1e-5)
        assert r.score == pytest.approx(18.1266, abs=1e-3)
        assert r.abnormal

    def test_zero_deviation(self):
        r = score_against(X, 15, 15)
        assert r.deviation == 0 and r.state_value == 1.0
        assert r.abnormal == (r.w1 * r.sigma + r.w2 > 10)

    def test_constant_window(self):
        r = score_against([5, 5, 5, 5], 5, 5)
        assert (r.sigma, r.w1, r.score, r.abnormal) == (0.0, 0.0, 1.0, False)

    def test_boundary_is_close_branch(self):
        # sigma of {0, 2, 4} is exactly 2
        r = score_against([0, 2, 4], 12, 10)
        assert r.sigma == 2.0 and r.deviation == 2.0
        assert r.state_value == 0.0

    def test_just_past_boundary(self):
        r = score_against([0, 2, 4], 12.002, 10)
        assert r.state_value == pytest.approx(1.001)

    def test_custom_threshold(self):
        r = score_against(X, 58, 15, ADFConfig(theta=10, score_threshold=20))
        assert not r.abnormal and r.threshold == 20

    def test_evaluate_uses_history(self):
        hist = [(i * 60, v) for i, v in enumerate([12, 14, 16, 18, 15])]
        r = evaluate(X, 58, 600, hist)
        assert r.baseline == 15.0 and r.score == pytest.approx(18.1266, abs=1e-3)

    def test_result_roundtrip(self):
        r = score_against(X, 58, 15)
        assert ADFResult.from_dict(r.to_dict()) == r


class TestConfig:
    @pytest.mark.parametrize("kw", [
        {"theta": 0}, {"theta": float("inf")}, {"baseline_window": 0},
        {"hour_factors": [1.0] * 23}, {"hour_factors": [0.0] * 24},
        {"sigma_floor": 0}, {"shuffle_trials": 0}, {"score_threshold": float("nan")}])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            ADFConfig(**kw)

    def test_tau_defaults_to_theta(self):
        assert ADFConfig(theta=7).tau == 7

    def test_roundtrip(self):
        cfg = ADFConfig(theta=3, score_threshold=4, rng_seed=9)
        assert ADFConfig.from_dict(cfg.to_dict()) == cfg


# -- properties --------------------------------------------------------------

finite = st.floats(-1e4, 1e4, allow_nan=False)


@settings(max_examples=200)
@given(st.floats(0.01, 1e3), st.floats(0.01, 1e3), st.floats(0.1, 100))
def test_w1_monotone(s1, s2, theta):
    lo, hi = sorted((s1, s2))
    w_lo, w_hi = lo / (lo + theta), hi / (hi + theta)
    r_lo = score_against([0, lo * math.sqrt(2)], 0, 0, ADFConfig(theta=theta))
    r_hi = score_against([0, hi * math.sqrt(2)], 0, 0, ADFConfig(theta=theta))
    assert 0 < r_lo.w1 < 1
    assert r_lo.w1 == pytest.approx(w_lo) and r_hi.w1 == pytest.approx(w_hi)
    if hi > lo * (1 + 1e-9):
        assert r_hi.w1 > r_lo.w1


@given(st.lists(finite, min_size=2, max_size=20), finite, finite)
def test_weights_sum_to_one(xs, x_t, b_t):
    r = score_against(xs, x_t, b_t)
    assert r.w1 + r.w2 == 1.0
    assert r.deviation == abs(x_t - b_t)
    assert r.abnormal == (r.score > r.threshold)


@given(st.lists(finite, min_size=2, max_size=20), st.lists(finite, min_size=1, max_size=40),
       finite, st.integers(0, 10**6))
def test_time_shift_invariance(xs, hist_vals, x_t, shift):
    hist = [(1000 + 60 * i, v) for i, v in enumerate(hist_vals)]
    t = 1000 + 60 * len(hist_vals)
    a = evaluate(xs, x_t, t, hist)
    b = evaluate(xs, x_t, t + shift, [(ts + shift, v) for ts, v in hist])
    assert a.abnormal == b.abnormal and a.score == b.score


def test_score_matches_oracle_on_random_inputs():
    rng = random.Random(2024)
    for _ in range(1000):
        n = rng.randint(2, 30)
        xs = [rng.uniform(-100, 100) for _ in range(n)]
        x_t, b_t = rng.uniform(-200, 200), rng.uniform(-200, 200)
        theta = rng.uniform(0.5, 50)
        r = score_against(xs, x_t, b_t, ADFConfig(theta=theta))
        assert r.score == pytest.approx(oracles.adf_score(xs, x_t, b_t, theta), rel=1e-9, abs=1e-9)


def test_deterministic_for_seed():
    rng = random.Random(1)
    xs = [rng.uniform(0, 10) for _ in range(40)]
    a = volatility(xs, ADFConfig(rng_seed=4))
    b = volatility(xs, ADFConfig(rng_seed=4))
    assert a == b


# -- estimator wrappers ------------------------------------------------------

class TestEstimators:
    def test_params_and_clone(self):
        det = AdaptiveDetector(theta=5.0)
        assert det.get_params()["theta"] == 5.0
        assert clone(det).get_params() == det.get_params()

    def test_fit_predict_worked(self):
        det = AdaptiveDetector().fit([12, 14, 16, 18, 15])
        assert det.baseline_ == 15.0
        window = np.array([[12, 14, 55, 61, 58]], dtype=float)
        assert det.score_samples(window)[0] == pytest.approx(
            oracles.adf_score([12, 14, 55, 61, 58], 58, 15, 10))
        assert det.predict(window).tolist() == [1]
        assert det.predict([[15, 15.1, 14.9, 15]]).tolist() == [0]

    def test_unfitted(self):
        from sklearn.exceptions import NotFittedError
        with pytest.raises(NotFittedError):
            AdaptiveDetector().predict([[1, 2]])

    def test_trend_classifier(self):
        out = TrendClassifier().fit_transform([X, X[::-1], [7, 7, 7, 7, 7]])
        assert out.ravel().tolist() == [3, 1, 0]
