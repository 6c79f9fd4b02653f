"""Density-ratio estimation with a probabilistic classifier.

A classifier ``f`` trained to separate a numerator sample (label 1) from a
denominator sample (label 0), each rescaled to equal total weight, has odds
``f / (1 - f)`` approximating the ratio of the two normalized densities.
Multiplying by the prior odds ``sum(w1) / sum(w0)`` turns that into the
ratio of the weighted (unnormalized) densities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nnet import MLPModel, MLPSpec, TrainConfig, forward, train_classifier, train_ensemble

__all__ = [
    "RatioEstimator",
    "fit_ratio",
    "evaluate_ratio",
    "member_odds",
    "gof_statistic",
    "classifier_gof",
]


@dataclass(frozen=True, eq=False)
class RatioEstimator:
    models: tuple[MLPModel, ...]
    prior_odds: float
    # label carried by the numerator sample during training
    numerator_class: int = 1

    def __post_init__(self):
        if not (np.isfinite(self.prior_odds) and self.prior_odds > 0):
            raise ValueError(f"prior_odds must be positive and finite, got {self.prior_odds!r}")
        if len(self.models) == 0:
            raise ValueError("RatioEstimator needs at least one model")
        dims = {m.spec.input_dim for m in self.models}
        if len(dims) != 1:
            raise ValueError(f"ensemble members disagree on input dimension: {sorted(dims)}")
        object.__setattr__(self, "models", tuple(self.models))

    @property
    def input_dim(self) -> int:
        return self.models[0].spec.input_dim

    @property
    def model(self) -> MLPModel:
        return self.models[0]


def _balanced(w: np.ndarray, target: float) -> np.ndarray:
    return w * (target / w.sum())


def fit_ratio(numerator, numerator_weights, denominator, denominator_weights,
              spec: MLPSpec, cfg: TrainConfig, *, n_members: int = 1,
              bootstrap: bool | None = None, threads: int = 1) -> RatioEstimator:
    """Train a ratio estimator for ``numerator`` over ``denominator``.

    Each class is rescaled to the same total weight before training so the
    classifier learns the ratio of normalized densities; the prior odds
    restore the weighted normalization.  ``n_members > 1`` trains a bootstrap
    ensemble (``bootstrap`` defaults to on for ensembles, off otherwise).
    """
    num = np.asarray(numerator, dtype=np.float64)
    den = np.asarray(denominator, dtype=np.float64)
    wn = np.asarray(numerator_weights, dtype=np.float64).reshape(-1)
    wd = np.asarray(denominator_weights, dtype=np.float64).reshape(-1)
    if num.shape[0] == 0 or den.shape[0] == 0:
        raise ValueError("numerator and denominator samples must be nonempty")
    if np.any(wn < 0) or np.any(wd < 0):
        raise ValueError("weights must be nonnegative")
    s1, s0 = float(wn.sum()), float(wd.sum())
    if not s1 > 0:
        raise ValueError("numerator sample has zero total weight")
    if not s0 > 0:
        raise ValueError("denominator sample has zero total weight")
    target = 0.5 * (num.shape[0] + den.shape[0])
    b1, b0 = _balanced(wn, target), _balanced(wd, target)
    if n_members == 1 and not bootstrap:
        models = (train_classifier(den, b0, num, b1, spec, cfg),)
    else:
        boot = True if bootstrap is None else bootstrap
        models = tuple(train_ensemble(den, b0, num, b1, spec, cfg, n_members,
                                      bootstrap=boot, threads=threads))
    return RatioEstimator(models, s1 / s0)


def member_odds(est: RatioEstimator, points) -> np.ndarray:
    """Per-member classifier odds ``f / (1 - f)``, shape ``(n_members, n_points)``."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None] if est.input_dim == 1 else pts[None, :]
    if pts.shape[1] != est.input_dim:
        raise ValueError(f"points have {pts.shape[1]} columns, estimator expects "
                         f"{est.input_dim}")
    out = np.empty((len(est.models), pts.shape[0]))
    for k, m in enumerate(est.models):
        f = forward(m, pts)
        out[k] = f / (1.0 - f)
    return out


def evaluate_ratio(est: RatioEstimator, points) -> np.ndarray:
    """Estimated ratio at ``points``; ensembles average the member ratios."""
    return est.prior_odds * member_odds(est, points).mean(axis=0)


def gof_statistic(predicted_labels, true_labels, weights) -> float:
    """``V = 1 - 2 |weighted accuracy - 1/2|``.

    Entries of ``predicted_labels`` that are not already 0/1 are treated as
    class-1 probabilities and thresholded at 0.5.
    """
    pred = np.asarray(predicted_labels, dtype=np.float64).reshape(-1)
    true = np.asarray(true_labels, dtype=np.float64).reshape(-1)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if not (pred.shape == true.shape == w.shape):
        raise ValueError("predicted labels, true labels and weights must have equal length")
    wsum = w.sum()
    if not wsum > 0:
        raise ValueError("total weight must be positive")
    hard = (pred >= 0.5).astype(np.float64)
    acc = float(np.sum(w * (hard == true)) / wsum)
    return float(min(1.0, max(0.0, 1.0 - 2.0 * abs(acc - 0.5))))


def classifier_gof(est: RatioEstimator, numerator, numerator_weights,
                   denominator, denominator_weights) -> float:
    """V on the held-out validation split of the estimator's first classifier.

    The data and weights must be the ones ``fit_ratio`` was called with; the
    validation rows are recovered from the training history and weighted
    with the same class-balanced weights the classifier saw.
    """
    model = est.models[0]
    hist = model.history
    if hist is None or hist.val_index is None:
        raise ValueError("estimator carries no validation split")
    num = np.asarray(numerator, dtype=np.float64)
    den = np.asarray(denominator, dtype=np.float64)
    num = num[:, None] if num.ndim == 1 else num
    den = den[:, None] if den.ndim == 1 else den
    wn = np.asarray(numerator_weights, dtype=np.float64).reshape(-1)
    wd = np.asarray(denominator_weights, dtype=np.float64).reshape(-1)
    if len(est.models) > 1:
        raise ValueError("validation split is only defined for single-model estimators")
    target = 0.5 * (num.shape[0] + den.shape[0])
    X = np.vstack([den, num])
    c = np.concatenate([np.zeros(den.shape[0]), np.ones(num.shape[0])])
    w = np.concatenate([_balanced(wd, target), _balanced(wn, target)])
    if hist.n_class0 != den.shape[0] or X.shape[0] <= hist.val_index.max():
        raise ValueError("data do not match the estimator's training set")
    vi = hist.val_index
    return gof_statistic(forward(model, X[vi]), c[vi], w[vi])

