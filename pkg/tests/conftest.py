"""Shared fixtures.  Heavy unfolding runs are session-scoped so the module
tests and the acceptance suite reuse the same trained models."""

from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from unfoldkit.experiments import (DATA_GAUSSIAN, MC_GAUSSIAN, GaussianConfig,
                                   GaussianForwardModel, generate_gaussian)
from unfoldkit.omnifold import run_omnifold
from unfoldkit.profile_omnifold import POFConfig, run_pof
from unfoldkit.w_function import (AnalyticGaussianW, default_w_config,
                                  synthesize_w_training_data, train_w)

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_ACCEPTANCE: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)


# --------------------------------------------------------------------------
# Gaussian study
# --------------------------------------------------------------------------

@pytest.fixture(scope="session")
def gaussian_mc():
    return generate_gaussian(MC_GAUSSIAN)


@pytest.fixture(scope="session")
def gaussian_data_full():
    """Data at theta = 1.5 with its particle-level truth."""
    return generate_gaussian(DATA_GAUSSIAN)


@pytest.fixture(scope="session")
def gaussian_data(gaussian_data_full):
    return gaussian_data_full.detector_view()


@pytest.fixture(scope="session")
def matched_data_full():
    return generate_gaussian(replace(DATA_GAUSSIAN, theta=1.0))


@pytest.fixture(scope="session")
def identity_data_full():
    """An independent draw from the MC process itself."""
    return generate_gaussian(GaussianConfig(mu=0.0, sigma=1.0, theta=1.0, n=100_000, seed=7))


@pytest.fixture(scope="session")
def analytic_w():
    return AnalyticGaussianW(theta_bar=1.0, smeared_index=1)


@pytest.fixture(scope="session")
def of_matched(gaussian_mc, matched_data_full):
    return run_omnifold(gaussian_mc, matched_data_full.detector_view(), 5)


@pytest.fixture(scope="session")
def of_mismatched(gaussian_mc, gaussian_data):
    return run_omnifold(gaussian_mc, gaussian_data, 10)


@pytest.fixture(scope="session")
def pof_analytic(gaussian_mc, gaussian_data, analytic_w):
    return run_pof(gaussian_mc, gaussian_data, analytic_w, POFConfig())


@pytest.fixture(scope="session")
def pof_identity(gaussian_mc, identity_data_full, analytic_w):
    return run_pof(gaussian_mc, identity_data_full.detector_view(), analytic_w, POFConfig())


@pytest.fixture(scope="session")
def learned_w(gaussian_mc):
    """Gaussian learned w: range [0.5, 2], 10-member bootstrap ensembles,
    up to 1000 epochs with patience 10 for both classifiers."""
    fwd = GaussianForwardModel(gaussian_mc.particle, theta_bar=1.0)
    d1, d2 = synthesize_w_training_data(fwd, (0.5, 2.0), seed=11)
    return train_w(d1, d2, None, default_w_config(seed=5), n_members=10,
                   f1_patience=10, f2_patience=10)


@pytest.fixture(scope="session")
def pof_learned(gaussian_mc, gaussian_data, learned_w):
    return run_pof(gaussian_mc, gaussian_data, learned_w,
                   POFConfig(theta_inits=(0.7, 1.3, 1.9)))


def central_grid(n=1000, seed=0):
    """Points with |y2 - x| <= 2 and theta in [0.8, 1.8]."""
    rng = np.random.default_rng(seed)
    x = rng.normal(0.0, 1.0, n)
    y1 = x + rng.normal(0.0, 1.0, n)
    y2 = x + rng.uniform(-2.0, 2.0, n)
    theta = rng.uniform(0.8, 1.8, n)
    return x[:, None], np.column_stack([y1, y2]), theta
