"""Profile OmniFold: unfolding with a profiled detector nuisance parameter.

Each iteration has three steps:

1. detector-level reweighting of MC carrying ``w(y, x, theta_k) * nu_k``,
   which also yields the goodness-of-fit ``V`` of the current state;
2. particle-level reweighting with pulled weights ``w(theta_k) * r_k``;
3. ``theta_{k+1} = argmax_theta Q2(theta)`` where ``Q2`` is the weighted
   sample average of ``log w(y, x, theta)`` plus a log prior.

Several starting values of theta are run and the run with the highest
final ``V`` is selected.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .core_data import EventSample, derive_seed
from .density_ratio import RatioEstimator, gof_statistic
from .nnet import MLPSpec, TrainConfig
from .omnifold import (DEFAULT_CLIP, _check_nu, _clip, detector_step, iteration_setup,
                       normalize_nu, particle_step, pull_back)
from .w_function import eval_w, log_w

__all__ = [
    "GaussianPrior",
    "POFConfig",
    "ThetaUpdate",
    "POFRunRecord",
    "POFResult",
    "gof_statistic",
    "w_at",
    "pof_step1",
    "pof_step2",
    "q2_objective",
    "q2_coefficients",
    "golden_section_max",
    "pof_step3",
    "run_pof_single",
    "run_pof",
    "DEFAULT_INITS",
]

DEFAULT_INITS = (0.7, 1.0, 1.3, 1.6, 1.9)
GRID_POINTS = 64
GOLDEN_TOL = 1e-5


@dataclass(frozen=True)
class GaussianPrior:
    """``log p0(theta) = -(theta - theta_bar)^2 / (2 sigma0^2)``."""

    theta_bar: float
    sigma0: float

    def __post_init__(self):
        if not self.sigma0 > 0:
            raise ValueError(f"sigma0 must be positive, got {self.sigma0}")

    def __call__(self, theta: float) -> float:
        return -((theta - self.theta_bar) ** 2) / (2.0 * self.sigma0 ** 2)


def _log_prior(prior, theta: float) -> float:
    return 0.0 if prior is None else float(prior(theta))


@dataclass(frozen=True)
class POFConfig:
    theta_inits: tuple[float, ...] = DEFAULT_INITS
    n_iter: int = 10
    prior: GaussianPrior | None = None
    theta_bounds: tuple[float, float] = (0.5, 2.0)
    clip: tuple[float, float] | None = DEFAULT_CLIP
    seed: int = 0
    # step 3 uses nu_k by default; True switches to the freshly updated nu_{k+1}
    step3_uses_updated_nu: bool = False

    def __post_init__(self):
        inits = tuple(float(t) for t in self.theta_inits)
        if not inits:
            raise ValueError("theta_inits must be nonempty")
        lo, hi = (float(b) for b in self.theta_bounds)
        if not lo < hi:
            raise ValueError(f"theta_bounds must be ordered, got {self.theta_bounds}")
        if self.n_iter < 1:
            raise ValueError("n_iter must be >= 1")
        if self.clip is not None and not 0 < self.clip[0] < self.clip[1]:
            raise ValueError(f"clip must satisfy 0 < lo < hi, got {self.clip}")
        object.__setattr__(self, "theta_inits", inits)
        object.__setattr__(self, "theta_bounds", (lo, hi))

    def clipped_inits(self, wfn=None) -> tuple[float, ...]:
        """Initial values clipped to the bounds and the w range; duplicates kept."""
        lo, hi = self.theta_bounds
        if wfn is not None:
            lo, hi = max(lo, wfn.theta_range[0]), min(hi, wfn.theta_range[1])
        return tuple(min(max(t, lo), hi) for t in self.theta_inits)

    def to_dict(self) -> dict:
        return {
            "theta_inits": list(self.theta_inits),
            "n_iter": self.n_iter,
            "prior": None if self.prior is None else {"theta_bar": self.prior.theta_bar,
                                                      "sigma0": self.prior.sigma0},
            "theta_bounds": list(self.theta_bounds),
            "clip": None if self.clip is None else list(self.clip),
            "seed": self.seed,
            "step3_uses_updated_nu": self.step3_uses_updated_nu,
        }


@dataclass(frozen=True)
class ThetaUpdate:
    theta: float
    objective: float
    at_boundary: bool


@dataclass(eq=False)
class POFRunRecord:
    """Trajectory of one initialization.

    Entry ``k`` of ``theta`` / ``nu`` is the state after iteration ``k + 1``;
    ``gof[k]`` is V of that state (measured by the following step 1).
    ``gof_initial`` is V of the starting state.
    """

    theta_init: float
    theta: list[float] = field(default_factory=list)
    nu: list[np.ndarray] = field(default_factory=list)
    gof: list[float] = field(default_factory=list)
    at_boundary: list[bool] = field(default_factory=list)
    gof_initial: float = float("nan")
    error: str | None = None

    def __len__(self) -> int:
        return len(self.theta)

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def final_theta(self) -> float:
        return self.theta[-1]

    @property
    def final_nu(self) -> np.ndarray:
        return self.nu[-1]

    @property
    def final_gof(self) -> float:
        return self.gof[-1] if self.gof else float("nan")


@dataclass(eq=False)
class POFResult:
    records: list[POFRunRecord]
    selected: int

    @property
    def best(self) -> POFRunRecord:
        return self.records[self.selected]

    @property
    def theta_hat(self) -> float:
        return self.best.final_theta

    @property
    def gof_hat(self) -> float:
        return self.best.final_gof


# --------------------------------------------------------------------------
# the three steps
# --------------------------------------------------------------------------

def w_at(mc: EventSample, theta: float, wfn, clip=DEFAULT_CLIP) -> np.ndarray:
    """``w(y_i, x_i, theta)`` at every MC event, clipped."""
    if mc.particle is None:
        raise ValueError("MC sample has no particle-level values")
    return _clip(eval_w(wfn, mc.particle, mc.detector, theta), clip)


def pof_step1(mc: EventSample, data: EventSample, nu_k, theta_k: float, wfn,
              spec: MLPSpec, cfg: TrainConfig,
              clip=DEFAULT_CLIP) -> tuple[RatioEstimator, float]:
    """Detector-level reweighting with MC weights ``w(theta_k) * nu_k * w_mc``; returns ``(r_k, V)``."""
    nu_k = _check_nu(mc, nu_k)
    weights = w_at(mc, theta_k, wfn, clip) * nu_k * mc.weights
    return detector_step(mc.detector, weights, data, spec, cfg)


def pof_step2(mc: EventSample, pulled_weights, nu_k, theta_k: float, wfn,
              spec: MLPSpec, cfg: TrainConfig, clip=DEFAULT_CLIP) -> np.ndarray:
    """Particle-level reweighting with pulled weights ``w(theta_k) * r_k``."""
    nu_k = _check_nu(mc, nu_k)
    pulled = np.asarray(pulled_weights, dtype=np.float64) * w_at(mc, theta_k, wfn, clip)
    ratio = particle_step(mc, pulled, spec, cfg, clip)
    return normalize_nu(nu_k * ratio, mc.weights)


def q2_coefficients(mc: EventSample, nu_k, theta_k: float, r_k, wfn,
                    clip=DEFAULT_CLIP) -> np.ndarray:
    """Per-event factors ``w_mc * nu_k * w(theta_k) * r_k / sum(w_mc)`` multiplying ``log w``.

    ``r_k`` is a :class:`RatioEstimator` or the already pulled-back values.
    """
    nu_k = _check_nu(mc, nu_k)
    if isinstance(r_k, RatioEstimator):
        r = pull_back(r_k, mc, clip)
    else:
        r = np.asarray(r_k, dtype=np.float64).reshape(-1)
        if r.size != len(mc):
            raise ValueError(f"r_k has {r.size} entries for {len(mc)} MC events")
    return mc.weights * nu_k * w_at(mc, theta_k, wfn, clip) * r / mc.weights.sum()


def _q2_from_coeffs(theta: float, coeffs: np.ndarray, mc: EventSample, wfn, prior) -> float:
    lw = log_w(wfn, mc.particle, mc.detector, theta)
    if not np.all(np.isfinite(lw)):
        bad = int(np.flatnonzero(~np.isfinite(lw))[0])
        raise ValueError(f"non-finite log w at event {bad} for theta={theta!r}")
    return float(np.dot(coeffs, lw)) + _log_prior(prior, theta)


def q2_objective(theta: float, mc: EventSample, nu_k, theta_k: float, r_k, wfn,
                 prior=None, clip=DEFAULT_CLIP) -> float:
    """Sample form of Q2 at ``theta``.

    ``sum_i w_mc,i nu_k,i w(y_i, x_i, theta_k) r_k(y_i) log w(y_i, x_i, theta)
    / sum_i w_mc,i + log p0(theta)``.
    """
    coeffs = q2_coefficients(mc, nu_k, theta_k, r_k, wfn, clip)
    return _q2_from_coeffs(float(theta), coeffs, mc, wfn, prior)


def golden_section_max(f: Callable[[float], float], a: float, b: float,
                       tol: float = GOLDEN_TOL) -> tuple[float, float]:
    """Maximize a unimodal ``f`` on ``[a, b]`` until the bracket is narrower than ``tol``."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return (c, fc) if fc >= fd else (d, fd)


def pof_step3(mc: EventSample, nu_k, theta_k: float, r_k, wfn, prior=None,
              bounds=(0.5, 2.0), clip=DEFAULT_CLIP, *,
              grid_points: int = GRID_POINTS, tol: float = GOLDEN_TOL) -> ThetaUpdate:
    """Maximize Q2 over ``bounds``: coarse grid, then golden-section refinement.

    Ties on the grid go to the point nearest ``theta_k``; a flat objective
    returns ``theta_k`` itself (clipped to the bounds).
    """
    lo, hi = (float(v) for v in bounds)
    if not lo < hi:
        raise ValueError(f"bounds must satisfy lo < hi, got {bounds}")
    wlo, whi = wfn.theta_range
    if lo < wlo or hi > whi:
        raise ValueError(f"bounds [{lo}, {hi}] exceed the w range [{wlo}, {whi}]")
    coeffs = q2_coefficients(mc, nu_k, theta_k, r_k, wfn, clip)

    def f(t):
        return _q2_from_coeffs(t, coeffs, mc, wfn, prior)

    grid = np.linspace(lo, hi, grid_points)
    vals = np.array([f(t) for t in grid])
    vmax = vals.max()
    scale = 1e-12 * max(1.0, abs(vmax))
    if vmax - vals.min() <= scale:
        t = min(max(float(theta_k), lo), hi)
        return ThetaUpdate(t, f(t), t in (lo, hi))
    ties = np.flatnonzero(vals >= vmax - scale)
    i = int(ties[np.argmin(np.abs(grid[ties] - theta_k))])
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, grid_points - 1)]
    t, ft = golden_section_max(f, a, b, tol)
    if ft < vals[i]:
        t, ft = float(grid[i]), float(vals[i])
    edge = tol
    return ThetaUpdate(float(t), float(ft), bool(t - lo <= edge or hi - t <= edge))


# --------------------------------------------------------------------------
# full runs
# --------------------------------------------------------------------------

def run_pof_single(mc: EventSample, data: EventSample, wfn, theta_init: float,
                   pof_cfg: POFConfig, spec: MLPSpec | None = None,
                   cfg: TrainConfig | None = None, *, nu0=None,
                   stream_label=0) -> POFRunRecord:
    """Run the three-step iteration from a single starting theta."""
    if mc.particle is None:
        raise ValueError("MC sample has no particle-level values")
    spec1 = spec or MLPSpec.step_classifier(mc.detector.shape[1])
    spec2 = replace(spec1, input_dim=mc.particle.shape[1])
    cfg = cfg or TrainConfig()
    base_cfg = replace(cfg, seed=derive_seed(cfg.seed, pof_cfg.seed, "init", stream_label))
    clip = pof_cfg.clip
    nu = normalize_nu(np.ones(len(mc)) if nu0 is None else _check_nu(mc, nu0), mc.weights)
    theta = float(theta_init)
    rec = POFRunRecord(theta_init=theta)
    for k in range(pof_cfg.n_iter):
        s1, c1 = iteration_setup(spec1, base_cfg, k, 1)
        r_k, gof = pof_step1(mc, data, nu, theta, wfn, s1, c1, clip)
        if k == 0:
            rec.gof_initial = gof
        else:
            rec.gof.append(gof)
        pulled = pull_back(r_k, mc, clip)
        s2, c2 = iteration_setup(spec2, base_cfg, k, 2)
        nu_next = pof_step2(mc, pulled, nu, theta, wfn, s2, c2, clip)
        nu_q2 = nu_next if pof_cfg.step3_uses_updated_nu else nu
        upd = pof_step3(mc, nu_q2, theta, pulled, wfn, pof_cfg.prior,
                        pof_cfg.theta_bounds, clip)
        nu, theta = nu_next, upd.theta
        rec.theta.append(theta)
        rec.nu.append(nu.copy())
        rec.at_boundary.append(upd.at_boundary)
    # one more step 1 measures V of the final state
    s1, c1 = iteration_setup(spec1, base_cfg, pof_cfg.n_iter, 1)
    _, gof = pof_step1(mc, data, nu, theta, wfn, s1, c1, clip)
    rec.gof.append(gof)
    return rec


def _select(records: Sequence[POFRunRecord]) -> int:
    best, best_v = -1, -math.inf
    for i, rec in enumerate(records):
        if rec.ok and len(rec.gof) and rec.final_gof > best_v:
            best, best_v = i, rec.final_gof
    if best < 0:
        msgs = "; ".join(f"init {i}: {r.error}" for i, r in enumerate(records))
        raise RuntimeError(f"every initialization failed ({msgs})")
    return best


def run_pof(mc: EventSample, data: EventSample, wfn, pof_cfg: POFConfig | None = None,
            spec: MLPSpec | None = None, cfg: TrainConfig | None = None, *,
            threads: int = 1) -> POFResult:
    """Run every initialization and select the one with the highest final V.

    Ties go to the lowest index.  A failing initialization is recorded with
    its error and skipped during selection.
    """
    pof_cfg = pof_cfg or POFConfig()
    inits = pof_cfg.clipped_inits(wfn)

    def one(i: int) -> POFRunRecord:
        try:
            return run_pof_single(mc, data, wfn, inits[i], pof_cfg, spec, cfg, stream_label=i)
        except Exception as exc:  # recorded, selection skips it
            return POFRunRecord(theta_init=inits[i],
                                error=f"initialization {i} (theta={inits[i]}): "
                                      f"{type(exc).__name__}: {exc}")

    if threads > 1 and len(inits) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(one, range(len(inits))))
    else:
        records = [one(i) for i in range(len(inits))]
    return POFResult(records, _select(records))
