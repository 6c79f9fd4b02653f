import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from unfoldkit.binned_em import (BinnedProblem, dagostini_step, dagostini_unfold, mle_oracle,
                                 poisson_loglik)


def random_problem(rng, B):
    """Well-conditioned banded response, Poisson counts from random truth."""
    K = np.zeros((B, B))
    for j in range(B):
        K[j, j] = rng.uniform(0.6, 0.75)
        for i in (j - 1, j + 1):
            if 0 <= i < B:
                K[i, j] = rng.uniform(0.05, 0.12)
    lam = rng.uniform(100, 1000, B)
    n = rng.poisson(K @ lam).astype(float)
    return K, n, lam


def test_loglik_closed_form():
    assert poisson_loglik([[1.0]], [5.0], [5.0]) == pytest.approx(5 * math.log(5) - 5,
                                                                  abs=1e-12)
    assert poisson_loglik([[1.0]], [5.0], [5.0]) == pytest.approx(3.0472, abs=1e-4)


def test_loglik_drops_with_unsupported_mass():
    K = np.array([[0.9, 0.0], [0.1, 1.0]])
    n = np.array([50.0, 0.0])
    base = poisson_loglik(K, [50 / 0.9, 1e-9], n)
    assert poisson_loglik(K, [50 / 0.9, 10.0], n) < base


def test_loglik_permutation_invariant():
    rng = np.random.default_rng(0)
    K, n, lam = random_problem(rng, 5)
    p = rng.permutation(5)
    assert poisson_loglik(K[p], lam, n[p]) == pytest.approx(poisson_loglik(K, lam, n),
                                                            rel=1e-13)


def test_loglik_zero_mean_error():
    with pytest.raises(ValueError, match="bin 0"):
        poisson_loglik([[1.0, 0.0], [0.0, 1.0]], [0.0, 1.0], [3.0, 1.0])


def test_step_identity_response():
    n = np.array([3.0, 7.0, 11.0])
    out = dagostini_step(np.eye(3), [1.0, 50.0, 2.0], n)
    assert np.allclose(out, n, rtol=1e-15)


def test_step_fixed_point():
    K = np.array([[0.8, 0.2], [0.2, 0.8]])
    lam = np.array([40.0, 70.0])
    assert np.allclose(dagostini_step(K, lam, K @ lam), lam, rtol=0, atol=1e-12)


def test_two_bin_example_converges():
    K = np.array([[0.8, 0.2], [0.2, 0.8]])
    tr = dagostini_unfold(BinnedProblem(K, [80.0, 120.0], [100.0, 100.0]), 10_000)
    assert np.allclose(tr.final, [200 / 3, 400 / 3], atol=1e-3)
    assert np.allclose(mle_oracle(K, [80.0, 120.0]), [200 / 3, 400 / 3], atol=1e-3)


def test_step_errors():
    with pytest.raises(ValueError):
        dagostini_step(np.eye(2), [0.0, 1.0], [1.0, 1.0])
    K = np.array([[1.0, 0.0], [0.0, 0.5]])
    K = np.vstack([K, [0.0, 0.0]])
    with pytest.raises(ValueError, match="bin 2"):
        dagostini_step(K, [1.0, 1.0], [1.0, 1.0, 2.0])


def test_zero_over_zero_convention():
    K = np.array([[1.0, 0.0], [0.0, 0.5], [0.0, 0.0]])
    out = dagostini_step(K, [1.0, 1.0], [2.0, 3.0, 0.0])
    assert np.all(np.isfinite(out)) and np.allclose(out, [2.0, 6.0])


@given(st.lists(st.floats(1e-3, 1e4), min_size=1, max_size=6))
def test_step_positive_property(lam):
    lam = np.array(lam)
    B = lam.size
    K = np.full((B, B), 0.5 / B) + 0.4 * np.eye(B)
    n = np.arange(1, B + 1, dtype=float)
    assert np.all(dagostini_step(K, lam, n) > 0)


def test_trajectory_contract():
    K = np.array([[0.8, 0.2], [0.2, 0.8]])
    tr = dagostini_unfold(BinnedProblem(K, [80.0, 120.0], [100.0, 100.0]), 7)
    assert len(tr) == 8 and tr.lambdas.shape == (8, 2)
    assert np.array_equal(tr.lambdas[0], [100.0, 100.0])
    with pytest.raises(ValueError):
        dagostini_unfold(BinnedProblem(K, [80.0, 120.0], [100.0, 100.0]), 0)


def test_problem_validation():
    with pytest.raises(ValueError):
        BinnedProblem(np.eye(2), [1.0, 2.0, 3.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        BinnedProblem(np.eye(2), [1.0, 2.0], [1.0, 0.0])
    with pytest.raises(ValueError):
        BinnedProblem(np.eye(2), [1.0, -2.0], [1.0, 1.0])


def test_monotone_on_random_5x5():
    rng = np.random.default_rng(1)
    for _ in range(100):
        K, n, _ = random_problem(rng, 5)
        tr = dagostini_unfold(BinnedProblem.with_flat_start(K, n), 200)
        assert np.all(np.diff(tr.logliks) >= -1e-10)


def test_random_3x3_reach_oracle():
    rng = np.random.default_rng(2)
    for _ in range(10):
        K, n, _ = random_problem(rng, 3)
        tr = dagostini_unfold(BinnedProblem.with_flat_start(K, n), 10_000)
        o = mle_oracle(K, n)
        assert abs(poisson_loglik(K, o, n) - tr.logliks[-1]) <= 1e-6
        # the oracle dominates every EM iterate
        assert np.all(tr.logliks <= poisson_loglik(K, o, n) + 1e-8)


def test_oracle_identity():
    n = np.array([4.0, 9.0, 1.0])
    assert np.allclose(mle_oracle(np.eye(3), n), n)


def test_oracle_numeric_branch_matches_em():
    # non-square response: no linear shortcut, the L-BFGS route is used
    rng = np.random.default_rng(5)
    K = rng.uniform(0.0, 1.0, (6, 4))
    K /= K.sum(axis=0) * 1.2
    n = rng.poisson(K @ rng.uniform(100, 500, 4)).astype(float)
    o = mle_oracle(K, n)
    tr = dagostini_unfold(BinnedProblem.with_flat_start(K, n), 20_000)
    assert poisson_loglik(K, o, n) >= tr.logliks[-1] - 1e-8
    assert np.linalg.norm(tr.final - o) / np.linalg.norm(o) <= 1e-3


def test_early_stopping_regularizes():
    # 20-bin smooth truth smeared by a wide Gaussian response
    B = 20
    centers = np.arange(B)
    K = np.exp(-0.5 * ((centers[:, None] - centers[None, :]) / 2.0) ** 2)
    K /= K.sum(axis=0) * 1.05
    truth = 2000 * np.exp(-0.5 * ((centers - 9.5) / 4.0) ** 2) + 100
    n = np.random.default_rng(0).poisson(K @ truth).astype(float)
    tr = dagostini_unfold(BinnedProblem.with_flat_start(K, n), 10_000)
    dist = np.linalg.norm(tr.lambdas - truth, axis=1)
    assert dist[1:200].min() < dist[-1]
