"""Response reweighting ``w(y, x, theta) = p(y | x, theta) / q(y | x)``.

Two variants are provided.  :class:`AnalyticGaussianW` is the closed form
for a Gaussian resolution on one detector coordinate.  :class:`LearnedW`
is the product of two classifier odds: ``f1`` separates events simulated
at random ``theta`` from events simulated at nominal ``theta_bar`` on
``(x, y, theta)``, and ``f2`` separates the same two samples on
``(x, theta)`` with the class order swapped.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .core_data import derive_seed, substream
from .density_ratio import RatioEstimator, fit_ratio, member_odds
from .nnet import MLPSpec, TrainConfig, models_from_json, models_to_json

__all__ = [
    "AnalyticGaussianW",
    "LearnedW",
    "WDataset",
    "analytic_gaussian_w",
    "eval_w",
    "log_w",
    "synthesize_w_training_data",
    "train_w",
    "default_w_config",
    "save_w",
    "load_w",
]


def analytic_gaussian_w(y2, x, theta, theta_bar):
    """Ratio of ``N(x, theta^2)`` to ``N(x, theta_bar^2)`` densities at ``y2``."""
    theta = np.asarray(theta, dtype=np.float64)
    if np.any(theta <= 0) or not theta_bar > 0:
        raise ValueError("theta and theta_bar must be positive")
    d2 = (np.asarray(y2, dtype=np.float64) - np.asarray(x, dtype=np.float64)) ** 2
    return (theta_bar / theta) * np.exp(-d2 / (2 * theta ** 2) + d2 / (2 * theta_bar ** 2))


@dataclass(frozen=True)
class AnalyticGaussianW:
    theta_bar: float = 1.0
    smeared_index: int = 1

    def __post_init__(self):
        if not self.theta_bar > 0:
            raise ValueError(f"theta_bar must be positive, got {self.theta_bar}")

    theta_range = (0.0, np.inf)


@dataclass(frozen=True, eq=False)
class LearnedW:
    f1: RatioEstimator
    f2: RatioEstimator
    theta_range: tuple[float, float]

    def __post_init__(self):
        lo, hi = self.theta_range
        if not lo < hi:
            raise ValueError(f"theta_range must be ordered, got {self.theta_range}")
        if len(self.f1.models) != len(self.f2.models):
            raise ValueError("f1 and f2 ensembles must have the same number of members")
        if self.f1.input_dim != self.f2.input_dim + self.dy:
            raise ValueError("f1 must see (x, y, theta) and f2 (x, theta)")
        object.__setattr__(self, "theta_range", (float(lo), float(hi)))

    @property
    def dx(self) -> int:
        return self.f2.input_dim - 1

    @property
    def dy(self) -> int:
        return self.f1.input_dim - self.f2.input_dim

    @property
    def n_members(self) -> int:
        return len(self.f1.models)


def _prepare(x, y, theta):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    x = x[:, None] if x.ndim == 1 else x
    y = y[:, None] if y.ndim == 1 else y
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"x has {x.shape[0]} rows, y has {y.shape[0]}")
    th = np.broadcast_to(np.asarray(theta, dtype=np.float64), (x.shape[0],))
    if not np.all(np.isfinite(th)):
        raise ValueError("theta must be finite")
    return x, y, th


def eval_w(wfn, x, y, theta) -> np.ndarray:
    """``w(y, x, theta)`` for each row; ``theta`` is a scalar or one value per row."""
    x, y, th = _prepare(x, y, theta)
    if isinstance(wfn, AnalyticGaussianW):
        if np.any(th <= 0):
            raise ValueError("theta must be positive")
        return analytic_gaussian_w(y[:, wfn.smeared_index], x[:, 0], th, wfn.theta_bar)
    if isinstance(wfn, LearnedW):
        lo, hi = wfn.theta_range
        if np.any(th < lo) or np.any(th > hi):
            bad = th[(th < lo) | (th > hi)][0]
            raise ValueError(f"theta={bad!r} outside the learned range [{lo}, {hi}]")
        if x.shape[1] != wfn.dx or y.shape[1] != wfn.dy:
            raise ValueError(f"expected x with {wfn.dx} and y with {wfn.dy} columns")
        o1 = member_odds(wfn.f1, np.column_stack([x, y, th]))
        o2 = member_odds(wfn.f2, np.column_stack([x, th]))
        return wfn.f1.prior_odds * wfn.f2.prior_odds * np.mean(o1 * o2, axis=0)
    raise TypeError(f"unsupported w function {type(wfn).__name__}")


def log_w(wfn, x, y, theta) -> np.ndarray:
    """Natural log of :func:`eval_w`; closed form for the analytic variant."""
    x, y, th = _prepare(x, y, theta)
    if isinstance(wfn, AnalyticGaussianW):
        if np.any(th <= 0):
            raise ValueError("theta must be positive")
        d2 = (y[:, wfn.smeared_index] - x[:, 0]) ** 2
        tb = wfn.theta_bar
        return np.log(tb / th) - d2 / (2 * th ** 2) + d2 / (2 * tb ** 2)
    return np.log(eval_w(wfn, x, y, th))


@dataclass(frozen=True, eq=False)
class WDataset:
    x: np.ndarray
    y: np.ndarray
    theta: np.ndarray
    theta_range: tuple[float, float] | None = None

    def __len__(self) -> int:
        return self.theta.size

    def full(self) -> np.ndarray:
        """Columns ``(x, y, theta)``."""
        return np.column_stack([self.x, self.y, self.theta])

    def marginal(self) -> np.ndarray:
        """Columns ``(x, theta)``."""
        return np.column_stack([self.x, self.theta])


def synthesize_w_training_data(fwd, theta_range=(0.5, 2.0), n: int | None = None,
                               seed: int = 0, mc_weights=None) -> tuple[WDataset, WDataset]:
    """Build the D1 / D2 training sets for a learned w.

    ``fwd`` is a forward model bound to the MC events (``n_events``,
    ``theta_bar`` and ``simulate(index, theta, rng) -> (x, y)``).  D1 draws
    events, ``theta ~ U(lo, hi)``, and simulates at that theta.  D2 draws
    events, simulates at ``theta_bar``, then attaches an independent
    ``theta ~ U(lo, hi)``.  Events are drawn with replacement, proportional
    to ``mc_weights`` when given.
    """
    lo, hi = (float(v) for v in theta_range)
    if not lo < hi:
        raise ValueError(f"theta range must satisfy lo < hi, got {theta_range}")
    n = fwd.n_events if n is None else int(n)
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    p = None
    if mc_weights is not None:
        p = np.asarray(mc_weights, dtype=np.float64)
        p = p / p.sum()

    def draw(label):
        return substream(seed, "index", label).choice(fwd.n_events, size=n, p=p)

    i1, i2 = draw(1), draw(2)
    th1 = substream(seed, "theta", 1).uniform(lo, hi, n)
    x1, y1 = fwd.simulate(i1, th1, substream(seed, "smear", 1))
    x2, y2 = fwd.simulate(i2, np.full(n, fwd.theta_bar), substream(seed, "smear", 2))
    th2 = substream(seed, "theta", 2).uniform(lo, hi, n)
    return WDataset(x1, y1, th1, (lo, hi)), WDataset(x2, y2, th2, (lo, hi))


def default_w_config(**overrides) -> TrainConfig:
    """Training setup for the w classifiers: up to 1000 epochs, patience 10."""
    base = dict(max_epochs=1000, patience=10)
    base.update(overrides)
    return TrainConfig(**base)


def train_w(d1: WDataset, d2: WDataset, spec: MLPSpec | None = None,
            cfg: TrainConfig | None = None, n_members: int = 10, *,
            f1_patience: int | None = 30, f2_patience: int | None = 3,
            theta_range=None, threads: int = 1) -> LearnedW:
    """Train the two ensembles of a learned w.

    ``spec`` sets the hidden architecture (input width is filled in per
    classifier; default: batch norm per layer, dropout 0.1 after layer 2).
    ``f1_patience`` / ``f2_patience`` override ``cfg.patience`` per
    classifier; pass ``None`` to keep ``cfg.patience``.  ``theta_range``
    defaults to the sampling range recorded on ``d1``, else the observed
    theta extent.
    """
    cfg = cfg or default_w_config()
    dx, dy = d1.x.shape[1], d1.y.shape[1]
    base = spec or MLPSpec.w_classifier(dx + dy + 1)
    if theta_range is None:
        theta_range = d1.theta_range
    if theta_range is None:
        theta_range = (float(min(d1.theta.min(), d2.theta.min())),
                       float(max(d1.theta.max(), d2.theta.max())))
    ones1, ones2 = np.ones(len(d1)), np.ones(len(d2))
    jobs = {
        "f1": (d1.full(), d2.full(), dx + dy + 1, f1_patience, "f1"),
        "f2": (d2.marginal(), d1.marginal(), dx + 1, f2_patience, "f2"),
    }
    out = {}
    for name, (num, den, dim, patience, label) in jobs.items():
        s = replace(base, input_dim=dim, seed=_label_seed(base.seed, label))
        c = replace(cfg, seed=_label_seed(cfg.seed, label),
                    patience=cfg.patience if patience is None else patience)
        w_num = ones1 if name == "f1" else ones2
        w_den = ones2 if name == "f1" else ones1
        try:
            out[name] = fit_ratio(num, w_num, den, w_den, s, c, n_members=n_members,
                                  bootstrap=True, threads=threads)
        except Exception as exc:
            raise type(exc)(f"w classifier {name}: {exc}") from exc
    return LearnedW(out["f1"], out["f2"], tuple(theta_range))


def _label_seed(seed: int, label: str) -> int:
    return derive_seed(seed, "w", label)


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------

def _estimator_to_json(est: RatioEstimator) -> dict:
    return {"prior_odds": repr(float(est.prior_odds)), "models": models_to_json(est.models)}


def _estimator_from_json(d: dict) -> RatioEstimator:
    return RatioEstimator(tuple(models_from_json(d["models"])), float(d["prior_odds"]))


def save_w(wfn, path) -> None:
    if isinstance(wfn, AnalyticGaussianW):
        doc = {"format": "unfoldkit-w", "variant": "analytic-gaussian",
               "theta_bar": repr(wfn.theta_bar), "smeared_index": wfn.smeared_index}
    elif isinstance(wfn, LearnedW):
        doc = {"format": "unfoldkit-w", "variant": "learned",
               "theta_range": [repr(v) for v in wfn.theta_range],
               "f1": _estimator_to_json(wfn.f1), "f2": _estimator_to_json(wfn.f2)}
    else:
        raise TypeError(f"unsupported w function {type(wfn).__name__}")
    Path(path).write_text(json.dumps(doc))


def load_w(path):
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "unfoldkit-w":
        raise ValueError(f"{path} is not a w-function bundle")
    if doc["variant"] == "analytic-gaussian":
        return AnalyticGaussianW(float(doc["theta_bar"]), int(doc["smeared_index"]))
    if doc["variant"] == "learned":
        lo, hi = (float(v) for v in doc["theta_range"])
        return LearnedW(_estimator_from_json(doc["f1"]), _estimator_from_json(doc["f2"]),
                        (lo, hi))
    raise ValueError(f"unknown w variant {doc['variant']!r}")
