import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from unfoldkit.density_ratio import (RatioEstimator, classifier_gof, evaluate_ratio, fit_ratio,
                                     gof_statistic, member_odds)
from unfoldkit.nnet import PROB_EPS, MLPSpec, TrainConfig, flatten_params, init_mlp, \
    unflatten_params


def _const_model(dim, logit):
    """A network whose output is sigmoid(logit) everywhere."""
    m = init_mlp(MLPSpec(input_dim=dim, hidden=(2,), standardize=False))
    m = unflatten_params(m, np.zeros_like(flatten_params(m)))
    m.biases[-1][:] = logit
    return m


@pytest.fixture(scope="module")
def gaussian_pair():
    rng = np.random.default_rng(10)
    num = rng.normal(0.5, 1.0, (100_000, 1))
    den = rng.normal(0.0, 1.0, (100_000, 1))
    return num, den


def fit_gaussian_ratio(num, den, seed=0, wn=None):
    wn = np.ones(len(num)) if wn is None else wn
    return fit_ratio(num, wn, den, np.ones(len(den)), MLPSpec.step_classifier(1, seed=seed),
                     TrainConfig(seed=seed))


def test_calibration_against_analytic_log_ratio(gaussian_pair):
    num, den = gaussian_pair
    est = fit_gaussian_ratio(num, den)
    x = np.linspace(-1.0, 1.5, 101)
    err = np.abs(np.log(evaluate_ratio(est, x[:, None])) - (0.5 * x - 0.125))
    assert err.max() <= 0.1


def test_identical_samples_ratio_near_one():
    rng = np.random.default_rng(3)
    s = rng.normal(size=(20_000, 1))
    est = fit_ratio(s, np.ones(20_000), s, np.ones(20_000), MLPSpec.step_classifier(1),
                    TrainConfig(batch_size=2000))
    assert np.median(np.abs(np.log(evaluate_ratio(est, s)))) <= 0.05


def test_doubled_numerator_weights_double_ratio(gaussian_pair):
    num, den = gaussian_pair
    a = fit_gaussian_ratio(num, den, seed=1)
    b = fit_gaussian_ratio(num, den, seed=1, wn=np.full(len(num), 2.0))
    assert b.prior_odds == pytest.approx(2 * a.prior_odds, rel=1e-15)
    x = np.linspace(-1.0, 1.5, 51)[:, None]
    q = evaluate_ratio(b, x) / evaluate_ratio(a, x)
    assert np.all((q >= 1.9) & (q <= 2.1))


def test_prior_odds_sample_sizes():
    rng = np.random.default_rng(0)
    num, den = rng.normal(size=(300, 1)), rng.normal(size=(100, 1))
    est = fit_ratio(num, np.ones(300), den, np.ones(100), MLPSpec(input_dim=1),
                    TrainConfig(batch_size=100, max_epochs=1))
    assert est.prior_odds == 3.0


def test_fit_ratio_errors():
    x = np.zeros((5, 1))
    spec, cfg = MLPSpec(input_dim=1), TrainConfig(max_epochs=1)
    with pytest.raises(ValueError, match="zero total"):
        fit_ratio(x, np.zeros(5), x, np.ones(5), spec, cfg)
    with pytest.raises(ValueError, match="zero total"):
        fit_ratio(x, np.ones(5), x, np.zeros(5), spec, cfg)
    with pytest.raises(ValueError, match="nonempty"):
        fit_ratio(x[:0], np.ones(0), x, np.ones(5), spec, cfg)


def test_ratio_half_output_is_exactly_one():
    est = RatioEstimator((_const_model(2, 0.0),), 1.0)
    assert np.array_equal(evaluate_ratio(est, np.zeros((4, 2))), np.ones(4))


def test_ratio_at_clamp_is_finite():
    est = RatioEstimator((_const_model(1, 50.0),), 1.0)
    r = evaluate_ratio(est, np.zeros((3, 1)))
    expected = (1 - PROB_EPS) / PROB_EPS
    assert np.all(np.isfinite(r))
    assert np.allclose(r, expected, rtol=1e-9)


def test_identical_members_equal_single():
    m = _const_model(1, 0.7)
    x = np.linspace(-1, 1, 7)[:, None]
    one = evaluate_ratio(RatioEstimator((m,), 1.3), x)
    three = evaluate_ratio(RatioEstimator((m, m, m), 1.3), x)
    assert np.allclose(one, three, rtol=1e-15)


def test_ensemble_averages_ratio_not_log_odds():
    a, b = _const_model(1, 1.0), _const_model(1, -1.0)
    r = evaluate_ratio(RatioEstimator((a, b), 1.0), np.zeros((1, 1)))[0]
    assert r == pytest.approx(0.5 * (np.e + np.exp(-1.0)), rel=1e-12)
    assert member_odds(RatioEstimator((a, b), 1.0), np.zeros((1, 1))).shape == (2, 1)


def test_dimension_mismatch():
    est = RatioEstimator((_const_model(2, 0.0),), 1.0)
    with pytest.raises(ValueError):
        evaluate_ratio(est, np.zeros((3, 3)))


def test_estimator_validation():
    with pytest.raises(ValueError):
        RatioEstimator((_const_model(1, 0.0),), 0.0)
    with pytest.raises(ValueError):
        RatioEstimator((_const_model(1, 0.0),), np.inf)
    with pytest.raises(ValueError):
        RatioEstimator((), 1.0)


@given(st.floats(-30, 30), st.floats(1e-3, 1e3))
def test_ratio_positive_finite_property(logit, odds):
    est = RatioEstimator((_const_model(1, logit),), odds)
    r = evaluate_ratio(est, np.linspace(-5, 5, 5)[:, None])
    assert np.all(r > 0) and np.all(np.isfinite(r))


# --------------------------------------------------------------------------
# goodness of fit
# --------------------------------------------------------------------------

def test_gof_unit_values():
    true = np.array([0, 1, 0, 1], dtype=float)
    w = np.ones(4)
    assert gof_statistic([0, 1, 1, 0], true, w) == 1.0
    assert gof_statistic(true, true, w) == 0.0
    assert gof_statistic([0, 1, 0, 0], true, w) == 0.5


def test_gof_thresholds_probabilities():
    assert gof_statistic([0.2, 0.9], [0, 1], [1, 1]) == 0.0
    assert gof_statistic([0.5, 0.49], [0, 1], [1, 1]) == 0.0


@given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 1), st.floats(0.01, 10)),
                min_size=1, max_size=40), st.floats(1e-3, 1e3))
def test_gof_range_and_scale_invariance(rows, c):
    p, t, w = (np.array(v, dtype=float) for v in zip(*rows))
    v = gof_statistic(p, t, w)
    assert 0.0 <= v <= 1.0
    assert gof_statistic(p, t, c * w) == pytest.approx(v, abs=1e-12)


def test_gof_zero_weight_error():
    with pytest.raises(ValueError):
        gof_statistic([1.0], [1.0], [0.0])


def test_classifier_gof_on_validation_split():
    rng = np.random.default_rng(0)
    a, b = rng.normal(0, 1, (4000, 1)), rng.normal(3, 1, (4000, 1))
    est = fit_ratio(b, np.ones(4000), a, np.ones(4000), MLPSpec(input_dim=1),
                    TrainConfig(batch_size=500))
    v = classifier_gof(est, b, np.ones(4000), a, np.ones(4000))
    assert v == pytest.approx(1 - 2 * abs(est.model.history.val_accuracy - 0.5), abs=1e-12)
    assert v < 0.3
    with pytest.raises(ValueError):
        classifier_gof(est, b[:10], np.ones(10), a, np.ones(4000))
