"""Event containers, histogramming, weighted KDE and CSV I/O."""

from __future__ import annotations

import csv
import hashlib
import math
import os
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

__all__ = [
    "EventSample",
    "Histogram",
    "ResponseMatrix",
    "load_events",
    "save_events",
    "build_histogram",
    "kde_estimate",
    "silverman_bandwidth",
    "write_table",
    "load_table",
    "substream",
    "derive_seed",
]


def _as_matrix(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a sequence of vectors, got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class EventSample:
    """Paired particle-level / detector-level events with per-event weights.

    ``particle`` is ``None`` for experimental data, where only detector-level
    values exist. Arrays are copied on construction and made read-only.
    """

    particle: np.ndarray | None
    detector: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        det = _as_matrix(self.detector, "detector")
        n = det.shape[0]
        if n < 1:
            raise ValueError("an EventSample needs at least one event")
        part = None
        if self.particle is not None:
            part = _as_matrix(self.particle, "particle")
            if part.shape[0] != n:
                raise ValueError(
                    f"particle ({part.shape[0]}) and detector ({n}) lengths differ")
            if not np.all(np.isfinite(part)):
                raise ValueError("particle values must be finite")
        if not np.all(np.isfinite(det)):
            raise ValueError("detector values must be finite")
        w = np.array(self.weights, dtype=np.float64).reshape(-1)
        if w.shape[0] != n:
            raise ValueError(f"weights ({w.shape[0]}) and detector ({n}) lengths differ")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        if np.any(w < 0):
            bad = int(np.flatnonzero(w < 0)[0])
            raise ValueError(f"negative weight {w[bad]!r} at event {bad}")
        if not np.any(w > 0):
            raise ValueError("at least one weight must be positive")
        for arr in (part, det, w):
            if arr is not None:
                arr.setflags(write=False)
        object.__setattr__(self, "particle", part)
        object.__setattr__(self, "detector", det)
        object.__setattr__(self, "weights", w)

    @classmethod
    def unit(cls, particle, detector) -> "EventSample":
        det = _as_matrix(detector, "detector")
        return cls(particle, det, np.ones(det.shape[0]))

    @property
    def detector_only(self) -> bool:
        return self.particle is None

    @property
    def n(self) -> int:
        return self.detector.shape[0]

    def __len__(self) -> int:
        return self.n

    def subset(self, index) -> "EventSample":
        index = np.asarray(index)
        part = None if self.particle is None else self.particle[index]
        return EventSample(part, self.detector[index], self.weights[index])

    def with_weights(self, weights) -> "EventSample":
        return EventSample(self.particle, self.detector, weights)

    def detector_view(self) -> "EventSample":
        """Drop particle-level values, as for experimental data."""
        return EventSample(None, self.detector, self.weights)


@dataclass(frozen=True, eq=False)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    underflow: float = 0.0
    overflow: float = 0.0

    @property
    def total(self) -> float:
        return float(self.counts.sum() + self.underflow + self.overflow)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    def to_csv(self, path) -> None:
        write_table(path, {
            "bin_low": self.edges[:-1],
            "bin_high": self.edges[1:],
            "count": self.counts,
        })


@dataclass(frozen=True, eq=False)
class ResponseMatrix:
    """Bin-to-bin smearing probabilities ``K[i, j] = P(detector bin i | true bin j)``."""

    entries: np.ndarray

    def __post_init__(self):
        K = np.array(self.entries, dtype=np.float64)
        if K.ndim != 2:
            raise ValueError("response matrix must be two-dimensional")
        if not np.all(np.isfinite(K)) or np.any(K < 0) or np.any(K > 1):
            raise ValueError("response entries must lie in [0, 1]")
        eff = K.sum(axis=0)
        if np.any(eff <= 0) or np.any(eff > 1 + 1e-12):
            bad = int(np.flatnonzero((eff <= 0) | (eff > 1 + 1e-12))[0])
            raise ValueError(
                f"column {bad} has efficiency {eff[bad]!r}; must lie in (0, 1]")
        K.setflags(write=False)
        object.__setattr__(self, "entries", K)

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    @property
    def efficiency(self) -> np.ndarray:
        return self.entries.sum(axis=0)

    @classmethod
    def from_pairs(cls, true_values, reco_values, true_edges, reco_edges,
                   weights=None) -> "ResponseMatrix":
        """Estimate the matrix from paired MC values, normalizing per true bin."""
        counts, _, _ = np.histogram2d(reco_values, true_values,
                                      bins=(reco_edges, true_edges), weights=weights)
        col = np.histogram(true_values, bins=true_edges, weights=weights)[0]
        with np.errstate(invalid="ignore", divide="ignore"):
            K = np.where(col > 0, counts / col, 0.0)
        return cls(K)


# --------------------------------------------------------------------------
# CSV I/O
# --------------------------------------------------------------------------

def _fmt(value: float) -> str:
    return format(float(value), ".17g")


def write_table(path, columns: Mapping[str, Sequence]) -> None:
    """Write equal-length columns to a header-row CSV, floats at 17 digits."""
    names = list(columns)
    cols = [np.asarray(columns[k]) for k in names]
    lengths = {len(c) for c in cols}
    if len(lengths) > 1:
        raise ValueError(f"columns have differing lengths {sorted(lengths)}")
    text_cols = []
    for c in cols:
        if np.issubdtype(c.dtype, np.integer) or np.issubdtype(c.dtype, np.bool_):
            text_cols.append([str(int(v)) for v in c.tolist()])
        elif np.issubdtype(c.dtype, np.number):
            text_cols.append([_fmt(v) for v in c.tolist()])
        else:
            text_cols.append([str(v) for v in c.tolist()])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        writer.writerows(zip(*text_cols))


def load_table(path) -> dict[str, np.ndarray]:
    """Read a numeric header-row CSV into a dict of float columns."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}: row {lineno} has {len(row)} cells, "
                                 f"expected {len(header)}")
            parsed = []
            for name, cell in zip(header, row):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise ValueError(f"{path}: non-numeric value {cell!r} at row "
                                     f"{lineno}, column {name!r}") from None
            rows.append(parsed)
    data = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))
    return {name: data[:, k] for k, name in enumerate(header)}


def load_events(path, schema: Mapping[str, Sequence[str]],
                weight_column: str | None = None) -> EventSample:
    """Load an event CSV.

    Parameters
    ----------
    path : path-like
        CSV file with a header row.
    schema : mapping
        ``{"particle": [...], "detector": [...]}`` column names. Omit
        ``particle`` (or give an empty list) for detector-only data.
    weight_column : str, optional
        Column holding per-event weights; unit weights when absent.
    """
    table = load_table(path)
    n_rows = len(next(iter(table.values()))) if table else 0

    def cols(names):
        missing = [c for c in names if c not in table]
        if missing:
            raise KeyError(f"{path}: missing column(s) {missing}")
        return np.column_stack([table[c] for c in names]) if names else None

    det_names = list(schema.get("detector", []))
    if not det_names:
        raise KeyError("schema must name at least one detector column")
    part_names = list(schema.get("particle", []) or [])
    detector = cols(det_names)
    particle = cols(part_names) if part_names else None
    if weight_column is None:
        weights = np.ones(n_rows)
    else:
        weights = cols([weight_column])[:, 0]
        neg = np.flatnonzero(weights < 0)
        if neg.size:
            # row numbers count the header as row 1
            raise ValueError(f"{path}: negative weight {weights[neg[0]]!r} at row "
                             f"{neg[0] + 2}, column {weight_column!r}")
    return EventSample(particle, detector, weights)


def save_events(sample: EventSample, path, schema: Mapping[str, Sequence[str]] | None = None,
                weight_column: str = "weight") -> dict[str, list[str]]:
    """Write an EventSample as CSV; returns the schema used."""
    if schema is None:
        schema = {
            "particle": [] if sample.particle is None else
            [f"x{k}" for k in range(sample.particle.shape[1])],
            "detector": [f"y{k}" for k in range(sample.detector.shape[1])],
        }
    columns: dict[str, np.ndarray] = {}
    if sample.particle is not None:
        for k, name in enumerate(schema["particle"]):
            columns[name] = sample.particle[:, k]
    for k, name in enumerate(schema["detector"]):
        columns[name] = sample.detector[:, k]
    columns[weight_column] = sample.weights
    write_table(path, columns)
    return {"particle": list(schema.get("particle", [])), "detector": list(schema["detector"])}


# --------------------------------------------------------------------------
# Histograms and KDE
# --------------------------------------------------------------------------

def build_histogram(values, weights, edges) -> Histogram:
    """Weighted histogram; bins are ``[lo, hi)`` except the last, which is closed."""
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    edges = np.asarray(edges, dtype=np.float64).reshape(-1)
    if values.shape != weights.shape:
        raise ValueError("values and weights must have equal length")
    if edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("edges must be strictly increasing with at least two entries")
    nb = edges.size - 1
    idx = np.searchsorted(edges, values, side="right") - 1
    idx[values == edges[-1]] = nb - 1
    under = idx < 0
    over = idx >= nb
    inside = ~(under | over)
    counts = np.bincount(idx[inside], weights=weights[inside], minlength=nb)
    counts = counts.astype(np.float64)
    counts.setflags(write=False)
    edges = edges.copy()
    edges.setflags(write=False)
    return Histogram(edges, counts, float(weights[under].sum()), float(weights[over].sum()))


def _weighted_quantile(values, weights, q):
    order = np.argsort(values)
    v, w = values[order], weights[order]
    cw = np.cumsum(w) - 0.5 * w
    cw /= w.sum()
    return np.interp(q, cw, v)


def silverman_bandwidth(values, weights) -> float:
    """Silverman's rule with the Kish effective sample size ``(sum w)^2 / sum w^2``."""
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    wsum = weights.sum()
    if not wsum > 0:
        raise ValueError("total weight must be positive")
    n_eff = wsum ** 2 / np.sum(weights ** 2)
    mean = np.sum(weights * values) / wsum
    sd = math.sqrt(max(np.sum(weights * (values - mean) ** 2) / wsum, 0.0))
    q25, q75 = _weighted_quantile(values, weights, [0.25, 0.75])
    iqr = (q75 - q25) / 1.34
    spread = min(sd, iqr) if iqr > 0 else sd
    return 0.9 * spread * n_eff ** (-0.2)


def kde_estimate(values, weights, eval_points, bandwidth: float | None = None,
                 chunk: int = 256) -> np.ndarray:
    """Weighted Gaussian kernel density estimate evaluated at ``eval_points``."""
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    pts = np.asarray(eval_points, dtype=np.float64).reshape(-1)
    if values.shape != weights.shape:
        raise ValueError("values and weights must have equal length")
    wsum = weights.sum()
    if not wsum > 0:
        raise ValueError("total weight must be positive")
    h = silverman_bandwidth(values, weights) if bandwidth is None else float(bandwidth)
    if not h > 0:
        raise ValueError(f"bandwidth must be positive, got {h!r}")
    wn = weights / wsum
    out = np.empty(pts.size)
    norm = 1.0 / (h * math.sqrt(2.0 * math.pi))
    for start in range(0, pts.size, chunk):
        p = pts[start:start + chunk]
        z = (p[:, None] - values[None, :]) / h
        out[start:start + chunk] = norm * (np.exp(-0.5 * z * z) @ wn)
    return out


# --------------------------------------------------------------------------
# Random streams
# --------------------------------------------------------------------------

def derive_seed(seed: int, *labels) -> int:
    """Deterministic 63-bit seed from a master seed and a tuple of labels."""
    text = "/".join([str(int(seed))] + [str(x) for x in labels])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little") >> 1


def substream(seed: int, *labels) -> np.random.Generator:
    """Named random stream, independent of every other label under the same seed."""
    return np.random.default_rng(derive_seed(seed, *labels))
