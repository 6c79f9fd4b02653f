"""Unbinned two-step OmniFold.

Each iteration reweights the MC detector-level sample towards data
(step 1), pulls the fitted detector ratio back to the particle level
through the MC event pairing, and turns the pulled weights into a smooth
function of the particle-level values (step 2).  Per-event particle-level
weights ``nu`` are kept normalized so that ``sum(nu * w_mc) == sum(w_mc)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .core_data import EventSample, derive_seed
from .density_ratio import RatioEstimator, classifier_gof, evaluate_ratio, fit_ratio
from .nnet import MLPSpec, TrainConfig

__all__ = [
    "DEFAULT_CLIP",
    "UnfoldState",
    "iteration_setup",
    "push_weights",
    "pull_back",
    "normalize_nu",
    "detector_step",
    "particle_step",
    "of_step1",
    "of_step2",
    "run_omnifold",
    "weighted_moments",
    "ks_distance",
]

DEFAULT_CLIP = (1e-4, 1e4)


@dataclass(eq=False)
class UnfoldState:
    nu: np.ndarray
    iteration: int
    detector_ratio_model: RatioEstimator | None
    # nu after each completed iteration, history[0] is the starting point
    history: list[np.ndarray] = field(default_factory=list)
    gof: list[float] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)


def iteration_setup(spec: MLPSpec, cfg: TrainConfig, iteration: int,
                    step: int) -> tuple[MLPSpec, TrainConfig]:
    """Fresh seeds for the classifier of ``step`` in ``iteration``."""
    return (replace(spec, seed=derive_seed(spec.seed, "iteration", iteration, step)),
            replace(cfg, seed=derive_seed(cfg.seed, "iteration", iteration, step)))


def _clip(values: np.ndarray, clip) -> np.ndarray:
    if clip is None:
        return values
    return np.clip(values, clip[0], clip[1])


def _check_nu(mc: EventSample, nu) -> np.ndarray:
    nu = np.asarray(nu, dtype=np.float64).reshape(-1)
    if nu.size != len(mc):
        raise ValueError(f"nu has {nu.size} entries for {len(mc)} MC events")
    if np.any(nu < 0) or not np.all(np.isfinite(nu)):
        raise ValueError("nu must be finite and nonnegative")
    return nu


def normalize_nu(nu: np.ndarray, mc_weights: np.ndarray) -> np.ndarray:
    """Rescale ``nu`` so that ``sum(nu * w_mc) == sum(w_mc)``."""
    mass = float(np.sum(nu * mc_weights))
    if not mass > 0:
        raise ValueError("reweighted MC has zero total weight")
    return nu * (float(np.sum(mc_weights)) / mass)


def push_weights(mc: EventSample, nu) -> np.ndarray:
    """Per-event weights carried by the MC detector values: ``nu * w_mc``."""
    return _check_nu(mc, nu) * mc.weights


def pull_back(est: RatioEstimator, mc: EventSample, clip=DEFAULT_CLIP) -> np.ndarray:
    """Detector-level ratio evaluated at each MC event's detector value."""
    return _clip(evaluate_ratio(est, mc.detector), clip)


def detector_step(mc_detector, mc_weights, data: EventSample, spec: MLPSpec,
                  cfg: TrainConfig) -> tuple[RatioEstimator, float]:
    """Fit ``data / weighted MC`` at the detector level and report V.

    Data weights are rescaled to the MC total so the estimator normalizes
    the data density against the (unnormalized) weighted MC density.
    """
    mc_weights = np.asarray(mc_weights, dtype=np.float64)
    total = float(mc_weights.sum())
    if not total > 0:
        raise ValueError("MC detector weights have zero total")
    dsum = float(data.weights.sum())
    dw = data.weights * (total / dsum)
    est = fit_ratio(data.detector, dw, mc_detector, mc_weights, spec, cfg)
    gof = classifier_gof(est, data.detector, dw, mc_detector, mc_weights)
    return est, gof


def particle_step(mc: EventSample, pulled, spec: MLPSpec, cfg: TrainConfig,
                  clip=DEFAULT_CLIP) -> np.ndarray:
    """Smooth pulled weights into a function of x: ``E[pulled | x]`` per MC event."""
    pulled = np.asarray(pulled, dtype=np.float64).reshape(-1)
    if pulled.size != len(mc):
        raise ValueError(f"pulled weights have {pulled.size} entries for {len(mc)} events")
    if np.any(pulled < 0) or not np.all(np.isfinite(pulled)):
        raise ValueError("pulled weights must be finite and nonnegative")
    if mc.particle is None:
        raise ValueError("MC sample has no particle-level values")
    w1 = pulled * mc.weights
    if not w1.sum() > 0:
        raise ValueError("pulled weights have zero total")
    est = fit_ratio(mc.particle, w1, mc.particle, mc.weights, spec, cfg)
    return _clip(evaluate_ratio(est, mc.particle), clip)


def of_step1(mc: EventSample, data: EventSample, nu, spec: MLPSpec,
             cfg: TrainConfig) -> RatioEstimator:
    """Detector-level reweighting: estimate ``p(y) / q_nu(y)``."""
    est, _ = detector_step(mc.detector, push_weights(mc, nu), data, spec, cfg)
    return est


def of_step2(mc: EventSample, pulled_weights, nu_k, spec: MLPSpec, cfg: TrainConfig,
             clip=DEFAULT_CLIP) -> np.ndarray:
    """Particle-level reweighting: ``nu_{k+1} = nu_k * E[r(Y) | x]``, renormalized."""
    nu_k = _check_nu(mc, nu_k)
    ratio = particle_step(mc, pulled_weights, spec, cfg, clip)
    return normalize_nu(nu_k * ratio, mc.weights)


def run_omnifold(mc: EventSample, data: EventSample, n_iter: int = 10,
                 spec: MLPSpec | None = None, cfg: TrainConfig | None = None, *,
                 clip=DEFAULT_CLIP, nu0=None) -> UnfoldState:
    """Alternate the two steps ``n_iter`` times from ``nu0`` (default all ones).

    ``state.gof[k]`` is V of the step-1 classifier in iteration ``k``, i.e.
    how well the weights entering that iteration describe the data.
    """
    if n_iter < 1:
        raise ValueError("n_iter must be >= 1")
    if mc.particle is None:
        raise ValueError("MC sample has no particle-level values")
    spec1 = spec or MLPSpec.step_classifier(mc.detector.shape[1])
    spec2 = replace(spec1, input_dim=mc.particle.shape[1])
    cfg = cfg or TrainConfig()
    nu = normalize_nu(np.ones(len(mc)) if nu0 is None else _check_nu(mc, nu0), mc.weights)
    state = UnfoldState(nu=nu, iteration=0, detector_ratio_model=None, history=[nu.copy()],
                        metadata={"renormalized": True, "clip": list(clip) if clip else None})
    for k in range(n_iter):
        s1, c1 = iteration_setup(spec1, cfg, k, 1)
        est, gof = detector_step(mc.detector, push_weights(mc, state.nu), data, s1, c1)
        pulled = pull_back(est, mc, clip)
        s2, c2 = iteration_setup(spec2, cfg, k, 2)
        state.nu = of_step2(mc, pulled, state.nu, s2, c2, clip)
        state.iteration = k + 1
        state.detector_ratio_model = est
        state.history.append(state.nu.copy())
        state.gof.append(gof)
    return state


def weighted_moments(values, weights) -> tuple[float, float]:
    """Weighted mean and standard deviation."""
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    mean = float(np.sum(w * v) / np.sum(w))
    var = float(np.sum(w * (v - mean) ** 2) / np.sum(w))
    return mean, var ** 0.5


def _weighted_cdf(values, weights, grid):
    order = np.argsort(values, kind="stable")
    v, w = values[order], weights[order]
    cum = np.concatenate([[0.0], np.cumsum(w)]) / w.sum()
    return cum[np.searchsorted(v, grid, side="right")]


def ks_distance(a, wa, b, wb=None) -> float:
    """Two-sample Kolmogorov-Smirnov distance between weighted samples."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    wa = np.ones_like(a) if wa is None else np.asarray(wa, dtype=np.float64).reshape(-1)
    wb = np.ones_like(b) if wb is None else np.asarray(wb, dtype=np.float64).reshape(-1)
    grid = np.union1d(a, b)
    return float(np.max(np.abs(_weighted_cdf(a, wa, grid) - _weighted_cdf(b, wb, grid))))
