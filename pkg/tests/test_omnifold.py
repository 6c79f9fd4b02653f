import numpy as np
import pytest
from scipy import stats

from unfoldkit.core_data import EventSample
from unfoldkit.density_ratio import RatioEstimator
from unfoldkit.nnet import MLPSpec, TrainConfig
from unfoldkit.omnifold import (detector_step, iteration_setup, ks_distance, normalize_nu,
                                of_step1, of_step2, pull_back, push_weights, run_omnifold,
                                weighted_moments)

from test_density_ratio import _const_model


def test_step1_matched_data_ratio_near_one(gaussian_mc, identity_data_full):
    est = of_step1(gaussian_mc, identity_data_full.detector_view(), np.ones(len(gaussian_mc)),
                   MLPSpec.step_classifier(2), TrainConfig())
    r = pull_back(est, gaussian_mc)
    assert np.median(np.abs(np.log(r))) <= 0.05


def test_step1_tracks_shifted_data(gaussian_mc, gaussian_data):
    est = of_step1(gaussian_mc, gaussian_data, np.ones(len(gaussian_mc)),
                   MLPSpec.step_classifier(2), TrainConfig())
    r = pull_back(est, gaussian_mc)
    # data sit at larger y1, so r grows with y1
    rho = stats.spearmanr(r, gaussian_mc.detector[:, 0]).statistic
    assert rho > 0.5


def test_step2_unit_pull_keeps_nu(gaussian_mc):
    nu = np.ones(len(gaussian_mc))
    s, c = iteration_setup(MLPSpec.step_classifier(1), TrainConfig(), 0, 2)
    new = of_step2(gaussian_mc, np.ones(len(gaussian_mc)), nu, s, c)
    assert np.median(np.abs(new - 1.0)) <= 0.05
    assert np.sum(new * gaussian_mc.weights) == pytest.approx(gaussian_mc.weights.sum(),
                                                              rel=1e-12)


def test_mismatched_first_iteration_moves_mean(gaussian_mc, of_mismatched):
    x = gaussian_mc.particle[:, 0]
    mean1, _ = weighted_moments(x, of_mismatched.history[1] * gaussian_mc.weights)
    assert mean1 > 0.3


def test_run_state_contract(gaussian_mc, of_mismatched):
    st = of_mismatched
    assert st.iteration == 10 and len(st.history) == 11 and len(st.gof) == 10
    assert np.array_equal(st.history[0], np.ones(len(gaussian_mc)))
    for nu in st.history:
        assert np.sum(nu * gaussian_mc.weights) == pytest.approx(len(gaussian_mc), rel=1e-12)
        assert np.all(nu > 0)
    assert all(0.0 <= v <= 1.0 for v in st.gof)
    # the discrepancy shrinks once the weights move toward data
    assert st.gof[-1] > st.gof[0]


def test_matched_kernel_recovers_truth(gaussian_mc, matched_data_full, of_matched):
    x = gaussian_mc.particle[:, 0]
    mean, sd = weighted_moments(x, of_matched.nu * gaussian_mc.weights)
    assert abs(mean - 0.8) <= 0.05 and abs(sd - 1.0) <= 0.07
    ks_of = ks_distance(x, of_matched.nu, matched_data_full.particle[:, 0])
    ks_mc = ks_distance(x, None, matched_data_full.particle[:, 0])
    assert ks_of < 0.25 * ks_mc


def test_identity_weights_stay_near_one(gaussian_mc, identity_data_full):
    st = run_omnifold(gaussian_mc, identity_data_full.detector_view(), 2)
    frac = np.mean((st.nu >= 0.8) & (st.nu <= 1.25))
    assert frac >= 0.95


def test_run_is_deterministic(gaussian_mc):
    small = gaussian_mc.subset(np.arange(5000))
    data = EventSample(None, small.detector[::-1] + 0.3, np.ones(5000))
    cfg = TrainConfig(batch_size=1000, max_epochs=5)
    a = run_omnifold(small, data, 1, cfg=cfg)
    b = run_omnifold(small, data, 1, cfg=cfg)
    assert np.array_equal(a.nu, b.nu)


# --------------------------------------------------------------------------
# small pieces
# --------------------------------------------------------------------------

def _tiny_mc(n=10):
    x = np.linspace(-1, 1, n)[:, None]
    return EventSample(x, np.column_stack([x[:, 0], -x[:, 0]]), np.linspace(1, 2, n))


def test_push_and_pull_with_constant_ratio():
    mc = _tiny_mc()
    nu = np.full(10, 2.0)
    assert np.array_equal(push_weights(mc, nu), 2.0 * mc.weights)
    est = RatioEstimator((_const_model(2, np.log(3.0)),), 1.0)
    assert np.allclose(pull_back(est, mc), 3.0, rtol=1e-12)
    est_big = RatioEstimator((_const_model(2, 30.0),), 1.0)
    assert np.all(pull_back(est_big, mc, clip=(1e-4, 1e4)) == 1e4)
    assert np.all(pull_back(est_big, mc, clip=None) > 1e4)


def test_normalize_nu():
    w = np.array([1.0, 2.0, 3.0])
    nu = normalize_nu(np.array([5.0, 1.0, 1.0]), w)
    assert np.sum(nu * w) == pytest.approx(6.0, rel=1e-15)
    with pytest.raises(ValueError):
        normalize_nu(np.zeros(3), w)


def test_nu_validation():
    mc = _tiny_mc()
    with pytest.raises(ValueError, match="10 MC"):
        push_weights(mc, np.ones(4))
    with pytest.raises(ValueError):
        push_weights(mc, -np.ones(10))
    with pytest.raises(ValueError):
        run_omnifold(mc.detector_view(), mc, 1)
    with pytest.raises(ValueError):
        run_omnifold(mc, mc, 0)


def test_detector_step_data_normalization():
    # data with 10x total weight but the same shape must give ratio ~ 1
    rng = np.random.default_rng(0)
    y = rng.normal(size=(8000, 1))
    data = EventSample(None, y, np.full(8000, 10.0))
    est, gof = detector_step(y, np.ones(8000), data, MLPSpec(input_dim=1),
                             TrainConfig(batch_size=1000, max_epochs=5))
    assert est.prior_odds == pytest.approx(1.0, rel=1e-12)
    assert gof > 0.9


def test_iteration_setup_fresh_seeds():
    spec, cfg = MLPSpec(input_dim=1), TrainConfig()
    seeds = {iteration_setup(spec, cfg, k, s)[1].seed for k in range(3) for s in (1, 2)}
    assert len(seeds) == 6
    assert iteration_setup(spec, cfg, 1, 1) == iteration_setup(spec, cfg, 1, 1)


def test_weighted_moments_and_ks():
    m, s = weighted_moments([0.0, 2.0], [1.0, 1.0])
    assert (m, s) == (1.0, 1.0)
    assert ks_distance([0.0, 1.0], None, [0.0, 1.0]) == 0.0
    assert ks_distance([0.0], None, [1.0]) == 1.0
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=300), rng.normal(0.5, 1, size=200)
    assert ks_distance(a, None, b) == pytest.approx(stats.ks_2samp(a, b).statistic, abs=1e-12)
    # integer weights equal repetition
    w = rng.integers(1, 4, 300).astype(float)
    assert ks_distance(a, w, b) == pytest.approx(
        stats.ks_2samp(np.repeat(a, w.astype(int)), b).statistic, abs=1e-12)
