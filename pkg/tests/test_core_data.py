import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from unfoldkit.core_data import (EventSample, ResponseMatrix, build_histogram, derive_seed,
                                 kde_estimate, load_events, load_table, save_events,
                                 silverman_bandwidth, substream, write_table)


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


# --------------------------------------------------------------------------
# EventSample
# --------------------------------------------------------------------------

def test_event_sample_invariants():
    s = EventSample.unit([[0.0], [1.0]], [[0.1, 0.2], [1.1, 1.2]])
    assert len(s) == 2 and s.particle.shape == (2, 1) and s.detector.shape == (2, 2)
    assert not s.detector_only
    with pytest.raises(ValueError):
        s.weights[0] = 5.0
    with pytest.raises(ValueError, match="lengths differ"):
        EventSample([[0.0]], [[0.0], [1.0]], [1.0, 1.0])
    with pytest.raises(ValueError, match="negative weight"):
        EventSample(None, [[0.0], [1.0]], [1.0, -1.0])
    with pytest.raises(ValueError, match="positive"):
        EventSample(None, [[0.0]], [0.0])
    with pytest.raises(ValueError, match="finite"):
        EventSample(None, [[np.nan]], [1.0])
    with pytest.raises(ValueError):
        EventSample(None, np.empty((0, 1)), [])


def test_detector_view_drops_particle():
    s = EventSample.unit([[0.0]], [[1.0]])
    v = s.detector_view()
    assert v.detector_only and v.particle is None


# --------------------------------------------------------------------------
# load / save
# --------------------------------------------------------------------------

def test_load_events_default_weights(tmp_path):
    p = _write(tmp_path / "ev.csv", "x,y1,y2\n0.1,0.2,0.3\n1,2,3\n-1,-2,-3\n")
    s = load_events(p, {"particle": ["x"], "detector": ["y1", "y2"]})
    assert len(s) == 3
    assert np.array_equal(s.weights, np.ones(3))
    assert np.array_equal(s.detector[1], [2.0, 3.0])
    assert s.particle[2, 0] == -1.0


def test_load_events_negative_weight_names_row(tmp_path):
    p = _write(tmp_path / "ev.csv", "x,y,w\n0,0,1\n0,0,-1\n")
    with pytest.raises(ValueError, match=r"row 3.*'w'"):
        load_events(p, {"particle": ["x"], "detector": ["y"]}, "w")


def test_load_events_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_events(tmp_path / "missing.csv", {"detector": ["y"]})
    p = _write(tmp_path / "ev.csv", "x,y\n0,1\n")
    with pytest.raises(KeyError, match="z"):
        load_events(p, {"detector": ["z"]})
    q = _write(tmp_path / "bad.csv", "x,y\n0,1\n2,abc\n")
    with pytest.raises(ValueError, match=r"row 3, column 'y'"):
        load_events(q, {"detector": ["y"]})


def test_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(3)
    for k in range(100):
        n = int(rng.integers(1, 20))
        scale = 10.0 ** rng.uniform(-300, 300)
        s = EventSample(rng.normal(size=(n, 1)) * scale, rng.normal(size=(n, 2)),
                        rng.exponential(size=n))
        path = tmp_path / f"s{k}.csv"
        schema = save_events(s, path)
        back = load_events(path, schema, "weight")
        assert np.array_equal(back.particle, s.particle)
        assert np.array_equal(back.detector, s.detector)
        assert np.array_equal(back.weights, s.weights)


def test_write_table_length_mismatch(tmp_path):
    with pytest.raises(ValueError):
        write_table(tmp_path / "t.csv", {"a": [1.0], "b": [1.0, 2.0]})
    write_table(tmp_path / "t.csv", {"a": [1.5, np.nan]})
    t = load_table(tmp_path / "t.csv")
    assert t["a"][0] == 1.5 and np.isnan(t["a"][1])


# --------------------------------------------------------------------------
# histograms
# --------------------------------------------------------------------------

def test_histogram_single_point():
    h = build_histogram([0.5], [2.0], [0.0, 1.0])
    assert h.counts.tolist() == [2.0]
    assert h.underflow == 0.0 and h.overflow == 0.0


def test_histogram_top_edge_in_last_bin():
    h = build_histogram([1.0, 2.0, 2.0000001, -0.1], [1.0, 1.0, 1.0, 1.0], [0.0, 1.0, 2.0])
    assert h.counts.tolist() == [0.0, 2.0]
    assert h.overflow == 1.0 and h.underflow == 1.0


def test_histogram_rejects_bad_edges():
    with pytest.raises(ValueError):
        build_histogram([0.0], [1.0], [0.0, 0.0, 1.0])
    with pytest.raises(ValueError):
        build_histogram([0.0], [1.0], [1.0, 0.0])


def test_histogram_mass_conservation_random():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(1, 50))
        v = rng.normal(0, 2, n)
        w = rng.exponential(size=n)
        edges = np.sort(rng.uniform(-3, 3, int(rng.integers(2, 10))))
        if np.any(np.diff(edges) <= 0):
            continue
        h = build_histogram(v, w, edges)
        assert math.isclose(h.total, w.sum(), rel_tol=1e-9)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=60),
       st.floats(1e-3, 1e3))
def test_histogram_mass_conservation_property(values, w):
    weights = np.full(len(values), w)
    h = build_histogram(values, weights, np.linspace(-10, 10, 7))
    assert math.isclose(h.total, weights.sum(), rel_tol=1e-9)


def test_histogram_to_csv(tmp_path):
    h = build_histogram([0.2, 0.7], [1.0, 3.0], [0.0, 0.5, 1.0])
    h.to_csv(tmp_path / "h.csv")
    t = load_table(tmp_path / "h.csv")
    assert list(t) == ["bin_low", "bin_high", "count"]
    assert t["count"].tolist() == [1.0, 3.0]


def test_response_matrix_validation():
    ResponseMatrix([[0.8, 0.2], [0.2, 0.8]])
    with pytest.raises(ValueError):
        ResponseMatrix([[0.8, 0.5], [0.3, 0.6]])
    with pytest.raises(ValueError):
        ResponseMatrix([[0.0, 0.5], [0.0, 0.5]])
    with pytest.raises(ValueError):
        ResponseMatrix([[-0.1, 0.5], [0.5, 0.5]])


def test_response_from_pairs_columns_normalized():
    rng = np.random.default_rng(1)
    t = rng.uniform(0, 1, 5000)
    r = t + rng.normal(0, 0.05, t.size)
    K = ResponseMatrix.from_pairs(t, r, np.linspace(0, 1, 6), np.linspace(-0.2, 1.2, 8))
    assert np.all(K.efficiency <= 1 + 1e-12)
    assert np.all(K.efficiency > 0.9)


# --------------------------------------------------------------------------
# KDE
# --------------------------------------------------------------------------

def test_kde_standard_normal_peak():
    assert kde_estimate([0.0], [1.0], [0.0], bandwidth=1.0)[0] == pytest.approx(
        1 / math.sqrt(2 * math.pi), abs=1e-12)


def test_kde_integrates_to_one():
    rng = np.random.default_rng(2)
    v = rng.normal(0, 1, 500)
    w = rng.exponential(size=500)
    h = silverman_bandwidth(v, w)
    lo, hi = v.min() - 8 * h, v.max() + 8 * h
    grid = np.linspace(lo, hi, 20001)
    dens = kde_estimate(v, w, grid)
    assert abs(integrate.trapezoid(dens, grid) - 1.0) <= 1e-3


def test_kde_weight_scale_invariance():
    rng = np.random.default_rng(4)
    v = rng.normal(size=200)
    w = np.ones(200)
    pts = np.linspace(-3, 3, 31)
    a = kde_estimate(v, w, pts)
    b = kde_estimate(v, 2 * w, pts)
    assert np.allclose(a, b, rtol=1e-12, atol=0)


@given(st.floats(1e-3, 1e3))
def test_kde_weight_scale_property(c):
    rng = np.random.default_rng(5)
    v = rng.normal(size=100)
    w = rng.exponential(size=100)
    pts = np.linspace(-2, 2, 9)
    assert np.allclose(kde_estimate(v, w, pts), kde_estimate(v, c * w, pts),
                       rtol=1e-12, atol=0)


def test_kde_errors():
    with pytest.raises(ValueError):
        kde_estimate([0.0, 1.0], [0.0, 0.0], [0.0])
    with pytest.raises(ValueError):
        kde_estimate([0.0], [1.0], [0.0], bandwidth=0.0)
    with pytest.raises(ValueError):
        kde_estimate([0.0], [1.0], [0.0], bandwidth=-1.0)


def test_silverman_uses_effective_size():
    rng = np.random.default_rng(6)
    v = rng.normal(size=400)
    h_unit = silverman_bandwidth(v, np.ones(400))
    w = np.zeros(400)
    w[:100] = 1.0
    # only 100 events carry weight: bandwidth follows n_eff = 100
    h_eff = silverman_bandwidth(v, w)
    assert h_eff == pytest.approx(silverman_bandwidth(v[:100], np.ones(100)), rel=1e-12)
    assert h_eff > h_unit * 0.9


# --------------------------------------------------------------------------
# random streams
# --------------------------------------------------------------------------

def test_substreams_are_deterministic_and_distinct():
    assert derive_seed(1, "a") == derive_seed(1, "a")
    assert derive_seed(1, "a") != derive_seed(1, "b")
    assert derive_seed(1, "a") != derive_seed(2, "a")
    assert 0 <= derive_seed(123, "x", 4) < 2 ** 63
    assert np.array_equal(substream(3, "noise").random(4), substream(3, "noise").random(4))
