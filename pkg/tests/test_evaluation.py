import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import ndimage

from snakelets.canny import EIGHT_CONNECTED
from snakelets.evaluation import (
    BreakSpec,
    Metrics,
    circle_contour,
    contour_gradient,
    ellipse_ring,
    make_breaks,
    parse_report,
    score,
    u_shape,
)
from snakelets.recovery import find_endpoints, needs_thinning


def score_oracle(result, truth, tol):
    """Brute-force nearest distances over all pixel pairs."""
    r = np.argwhere(result)
    t = np.argwhere(truth)

    def nearest(a, b):
        return np.array([np.hypot(*(b - p).T).min() for p in a])

    dr = nearest(r, t)
    dt = nearest(t, r)
    p = float(np.mean(dr <= tol))
    rc = float(np.mean(dt <= tol))
    return p, rc, float(dr.mean())


def test_breakspec_validation():
    with pytest.raises(ValueError):
        BreakSpec(-1, 5, 10)
    with pytest.raises(ValueError):
        BreakSpec(1, 0, 10)
    with pytest.raises(ValueError):
        BreakSpec(1, 10, 5)


def test_fixtures_are_thin_and_closed():
    for fx in (ellipse_ring(), circle_contour((60, 60), 29.5, 29.5, 20)):
        assert not needs_thinning(fx)
        assert find_endpoints(fx) == []
        assert ndimage.label(fx, structure=EIGHT_CONNECTED)[1] == 1
    u = u_shape()
    assert not needs_thinning(u) and len(find_endpoints(u)) == 2


def test_parallel_lines_example():
    a = np.zeros((12, 20), dtype=bool)
    b = np.zeros((12, 20), dtype=bool)
    a[5, 2:18] = True
    b[7, 2:18] = True
    m = score(a, b, 2.0)
    assert m.precision == 1.0 and m.recall == 1.0 and m.f1 == 1.0
    assert m.mean_contour_distance == pytest.approx(2.0)
    assert score(a, b, 1.5).precision == 0.0


@settings(max_examples=40, deadline=None)
@given(
    arrays(np.bool_, (12, 12), elements=st.booleans()),
    arrays(np.bool_, (12, 12), elements=st.booleans()),
    st.floats(0, 4),
)
def test_score_matches_brute_force(result, truth, tol):
    if not result.any() or not truth.any():
        return
    m = score(result, truth, tol)
    p, r, d = score_oracle(result, truth, tol)
    assert m.precision == pytest.approx(p)
    assert m.recall == pytest.approx(r)
    assert m.mean_contour_distance == pytest.approx(d)
    if p + r > 0:
        assert m.f1 == pytest.approx(2 * p * r / (p + r))


def test_empty_set_conventions():
    truth = np.zeros((5, 5), dtype=bool)
    truth[2, 2] = True
    empty = np.zeros_like(truth)
    m = score(empty, truth, 2.0)
    assert m.precision == 1.0 and m.recall == 0.0 and m.f1 == 0.0 and m.mean_contour_distance == 0.0
    m = score(truth, empty, 2.0)
    assert m.recall == 1.0 and m.precision == 0.0
    assert score(truth, truth, 2.0).gap_closure_rate == 1.0
    with pytest.raises(ValueError):
        score(np.zeros((3, 3), bool), truth, 2.0)


def test_gap_closure_fraction():
    truth = np.zeros((10, 30), dtype=bool)
    truth[5, :] = True
    gap = np.array([[x, 5] for x in range(10, 20)])
    broken = truth.copy()
    broken[5, 10:20] = False
    assert score(broken, truth, 0.5, [gap]).gap_closure_rate == 0.0
    partial = broken.copy()
    partial[5, 10:18] = True
    assert score(partial, truth, 0.5, [gap]).gap_closure_rate == 1.0
    partial[5, 17] = False
    assert score(partial, truth, 0.5, [gap]).gap_closure_rate == 0.0


def test_make_breaks_count_zero_is_copy():
    ring = ellipse_ring()
    broken, gaps = make_breaks(ring, BreakSpec(0, 5, 10))
    assert np.array_equal(broken, ring) and broken is not ring and gaps == []


def test_make_breaks_removes_requested_run():
    circle = circle_contour((40, 40), 19.5, 19.5, 16)
    n = int(circle.sum())
    broken, gaps = make_breaks(circle, BreakSpec(1, 10, 10, 4))
    assert broken.sum() == n - 10 and len(gaps[0]) == 10
    assert not broken[gaps[0][:, 1], gaps[0][:, 0]].any()
    assert circle[gaps[0][:, 1], gaps[0][:, 0]].all()
    assert len(find_endpoints(broken)) == 2


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4))
def test_make_breaks_properties(seed, count):
    fx = ellipse_ring((120, 120), axes=(45, 30)) | u_shape((120, 120), radius=10, top=50, bottom=70)
    spec = BreakSpec(count, 5, 15, seed)
    broken, gaps = make_breaks(fx, spec)
    again, gaps2 = make_breaks(fx, spec)
    assert np.array_equal(broken, again)
    assert all(np.array_equal(a, b) for a, b in zip(gaps, gaps2))
    assert len(gaps) == count
    assert broken.sum() == fx.sum() - sum(len(g) for g in gaps)
    labels = ndimage.label(fx, structure=EIGHT_CONNECTED)[0]
    for g in gaps:
        assert 5 <= len(g) <= 15
        assert len(set(labels[g[:, 1], g[:, 0]].tolist())) == 1
        # each run is contiguous
        steps = np.abs(np.diff(g, axis=0)).max(axis=1)
        assert np.all(steps == 1)


def test_make_breaks_impossible():
    tiny = np.zeros((10, 10), dtype=bool)
    tiny[5, 2:8] = True
    with pytest.raises(ValueError):
        make_breaks(tiny, BreakSpec(1, 10, 10))
    with pytest.raises(ValueError):
        make_breaks(np.zeros((5, 5), bool), BreakSpec(1, 2, 2))


def test_report_roundtrip():
    m = Metrics(0.5, 0.25, 1 / 3, 1.0, 0.123456789)
    parsed = parse_report(m.report())
    assert list(parsed) == ["precision", "recall", "f1", "gap_closure_rate", "mean_contour_distance"]
    assert parsed["f1"] == pytest.approx(1 / 3, abs=1e-6)
    assert parsed["mean_contour_distance"] == pytest.approx(0.123457)


def test_contour_gradient_ridge_and_orientation():
    shape, c, r = (80, 80), 39.5, 25.0
    truth = circle_contour(shape, c, c, r)
    g = contour_gradient(truth)
    assert g.magnitude.max() == pytest.approx(1.0)
    ys, xs = np.nonzero(truth)
    radial = np.mod(np.arctan2(ys - c, xs - c), np.pi)
    diff = np.abs(np.angle(np.exp(2j * (g.orientation[ys, xs] - radial)))) / 2
    assert np.median(diff) < 0.1
    assert not contour_gradient(np.zeros((5, 5), bool)).magnitude.any()
