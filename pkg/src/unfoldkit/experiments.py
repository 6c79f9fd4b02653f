"""Generators and observable builders for the Gaussian and dijet studies.

Gaussian study: ``X ~ N(mu, sigma^2)``, ``Y1 = X + Z1``, ``Y2 = X + Z2`` with
``Z1 ~ N(0, 1)`` and ``Z2 ~ N(0, theta^2)``.  Only the second detector
coordinate depends on the resolution parameter ``theta``.

Dijet study: from per-event leading/subleading jet momenta at truth and
reco level, ``X = pt1_truth + pt2_truth`` and the detector observables are
the sum and difference of the two jets with their reco-minus-truth
residuals scaled by ``theta``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
import numpy as np

from .core_data import EventSample, substream

__all__ = [
    "GaussianConfig",
    "JetRecord",
    "generate_gaussian",
    "gaussian_smear",
    "build_jet_observables",
    "jet_records_array",
    "weighted_resample",
    "GaussianForwardModel",
    "JetForwardModel",
    "SyntheticJetConfig",
    "generate_synthetic_jets",
    "make_synthetic_jet_study",
    "MC_GAUSSIAN",
    "DATA_GAUSSIAN",
]


@dataclass(frozen=True)
class GaussianConfig:
    mu: float = 0.0
    sigma: float = 1.0
    theta: float = 1.0
    n: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not self.theta > 0:
            raise ValueError(f"theta must be positive, got {self.theta}")
        if int(self.n) < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")

    def to_dict(self) -> dict:
        return asdict(self)


MC_GAUSSIAN = GaussianConfig(mu=0.0, sigma=1.0, theta=1.0, n=100_000, seed=1)
DATA_GAUSSIAN = GaussianConfig(mu=0.8, sigma=1.0, theta=1.5, n=100_000, seed=2)


def gaussian_smear(x: np.ndarray, theta, noise1: np.random.Generator,
                   noise2: np.random.Generator) -> np.ndarray:
    """Detector values ``(x + N(0,1), x + N(0, theta^2))`` for particle values ``x``."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    theta = np.broadcast_to(np.asarray(theta, dtype=np.float64), x.shape)
    y1 = x + noise1.standard_normal(x.size)
    y2 = x + theta * noise2.standard_normal(x.size)
    return np.column_stack([y1, y2])


def generate_gaussian(cfg: GaussianConfig) -> EventSample:
    """Draw ``cfg.n`` paired events with unit weights."""
    x = cfg.mu + cfg.sigma * substream(cfg.seed, "particle").standard_normal(int(cfg.n))
    y = gaussian_smear(x, cfg.theta, substream(cfg.seed, "noise-1"),
                       substream(cfg.seed, "noise-2"))
    return EventSample.unit(x[:, None], y)


@dataclass(frozen=True)
class JetRecord:
    pt1_truth: float
    pt2_truth: float
    pt1_reco: float
    pt2_reco: float

    def __post_init__(self):
        vals = (self.pt1_truth, self.pt2_truth, self.pt1_reco, self.pt2_reco)
        if not all(np.isfinite(v) and v > 0 for v in vals):
            raise ValueError(f"jet momenta must be finite and positive, got {vals}")


def jet_records_array(records) -> np.ndarray:
    """Validated ``(n, 4)`` array ``[pt1_truth, pt2_truth, pt1_reco, pt2_reco]``."""
    if isinstance(records, np.ndarray):
        arr = np.asarray(records, dtype=np.float64)
    else:
        rows = []
        for r in records:
            if isinstance(r, JetRecord):
                rows.append((r.pt1_truth, r.pt2_truth, r.pt1_reco, r.pt2_reco))
            else:
                rows.append(tuple(r))
        arr = np.array(rows, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 4:
        raise ValueError(f"jet records must have four columns, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(arr), axis=1))[0])
        raise ValueError(f"non-finite jet momentum in record {bad}")
    if np.any(arr <= 0):
        bad = int(np.flatnonzero(np.any(arr <= 0, axis=1))[0])
        raise ValueError(f"nonpositive jet momentum in record {bad}")
    return arr


def _jet_detector(arr: np.ndarray, theta) -> np.ndarray:
    t1, t2, r1, r2 = arr.T
    theta = np.asarray(theta, dtype=np.float64)
    j1 = t1 + theta * (r1 - t1)
    j2 = t2 + theta * (r2 - t2)
    return np.column_stack([j1 + j2, j1 - j2])


def build_jet_observables(records, theta: float) -> EventSample:
    """``X = pt1 + pt2`` (truth) and ``(Y1, Y2)`` = sum/difference of theta-scaled jets."""
    if not np.isfinite(theta):
        raise ValueError(f"theta must be finite, got {theta!r}")
    arr = jet_records_array(records)
    x = arr[:, 0] + arr[:, 1]
    return EventSample.unit(x[:, None], _jet_detector(arr, theta))


def weighted_resample(sample: EventSample, values, n_out: int, seed: int) -> EventSample:
    """Draw ``n_out`` events with probability proportional to ``values``; unit weights out."""
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.size != len(sample):
        raise ValueError("one value per event is required")
    if np.any(v < 0) or not np.all(np.isfinite(v)):
        raise ValueError("resampling values must be finite and nonnegative")
    total = v.sum()
    if not total > 0:
        raise ValueError("resampling values sum to zero")
    idx = substream(seed, "resample").choice(len(sample), size=int(n_out), p=v / total)
    out = sample.subset(idx)
    return out.with_weights(np.ones(int(n_out)))


# --------------------------------------------------------------------------
# forward models for w training
# --------------------------------------------------------------------------

class GaussianForwardModel:
    """Gaussian smearing bound to a set of MC particle values.

    ``simulate(index, theta, rng)`` returns particle and detector values for
    the MC events at ``index`` smeared with per-event resolution ``theta``.
    """

    def __init__(self, particle, theta_bar: float = 1.0):
        self.particle = np.asarray(particle, dtype=np.float64).reshape(-1, 1)
        self.theta_bar = float(theta_bar)

    @property
    def n_events(self) -> int:
        return self.particle.shape[0]

    def simulate(self, index, theta, rng: np.random.Generator):
        x = self.particle[np.asarray(index)]
        seeds = rng.integers(0, 2**63 - 1, size=2)
        y = gaussian_smear(x[:, 0], theta, np.random.default_rng(seeds[0]),
                           np.random.default_rng(seeds[1]))
        return x, y


class JetForwardModel:
    """Dijet response bound to MC jet records; deterministic in ``theta``."""

    def __init__(self, records, theta_bar: float = 1.0):
        self.records = jet_records_array(records)
        self.theta_bar = float(theta_bar)

    @property
    def n_events(self) -> int:
        return self.records.shape[0]

    def simulate(self, index, theta, rng: np.random.Generator | None = None):
        arr = self.records[np.asarray(index)]
        x = (arr[:, 0] + arr[:, 1])[:, None]
        return x, _jet_detector(arr, theta)


# --------------------------------------------------------------------------
# synthetic dijet stand-in
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticJetConfig:
    """Toy dijet records: power-law leading jet, imbalanced subleading jet,
    Gaussian fractional smearing at reco level."""

    n: int = 40_000
    pt_min: float = 500.0
    pt_max: float = 1500.0
    power: float = 5.0
    imbalance: float = 0.06
    resolution: float = 0.06
    seed: int = 0


def generate_synthetic_jets(cfg: SyntheticJetConfig) -> np.ndarray:
    """``(n, 4)`` records drawn by inverse-CDF from ``pt^-power`` on ``[pt_min, pt_max]``."""
    n = int(cfg.n)
    u = substream(cfg.seed, "jet-pt").random(n)
    a = 1.0 - cfg.power
    lo, hi = cfg.pt_min ** a, cfg.pt_max ** a
    pt1 = (lo + u * (hi - lo)) ** (1.0 / a)
    frac = np.abs(substream(cfg.seed, "jet-balance").normal(0.0, cfg.imbalance, n))
    pt2 = pt1 * np.clip(1.0 - frac, 0.3, 1.0)
    z = substream(cfg.seed, "jet-smear").standard_normal((n, 2))
    r1 = pt1 * (1.0 + cfg.resolution * z[:, 0])
    r2 = pt2 * (1.0 + cfg.resolution * z[:, 1])
    return jet_records_array(np.column_stack([pt1, pt2, r1, r2]))


def make_synthetic_jet_study(cfg: SyntheticJetConfig = SyntheticJetConfig(),
                             theta_data: float = 1.7, tilt: float = 1.5):
    """Split toy records into a data half (at ``theta_data``) and an MC half.

    The MC half is resampled with weights ``(X / median X)^(-tilt)`` to give
    MC a softer truth spectrum than data.  Returns
    ``(mc_sample, mc_records, data_sample, data_truth)`` where ``data_truth``
    is the particle-level sample behind the data.
    """
    recs = generate_synthetic_jets(cfg)
    perm = substream(cfg.seed, "jet-split").permutation(len(recs))
    half = len(recs) // 2
    data_recs, mc_pool = recs[perm[:half]], recs[perm[half:]]
    data = build_jet_observables(data_recs, theta_data)
    pool = build_jet_observables(mc_pool, 1.0)
    xs = pool.particle[:, 0]
    values = (xs / np.median(xs)) ** (-tilt)
    idx = substream(cfg.seed, "resample").choice(len(pool), size=half, p=values / values.sum())
    mc_records = mc_pool[idx]
    mc = build_jet_observables(mc_records, 1.0)
    return mc, mc_records, data.detector_view(), EventSample.unit(data.particle, data.detector)
