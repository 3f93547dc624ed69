from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from snakelets.canny import Thresholds, canny_detect, hysteresis, thresholds_from_fractiles
from snakelets.evaluation import half_plane_image
from snakelets.imagecore import RasterImage


def reach_oracle(mag: np.ndarray, th: Thresholds) -> np.ndarray:
    """Breadth-first search from every strong pixel through weak 8-neighbours."""
    h, w = mag.shape
    out = np.zeros((h, w), dtype=bool)
    queue = deque()
    for y in range(h):
        for x in range(w):
            if mag[y, x] >= th.high and mag[y, x] > th.low:
                out[y, x] = True
                queue.append((y, x))
    while queue:
        y, x = queue.popleft()
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                ny, nx = y + dy, x + dx
                if 0 <= ny < h and 0 <= nx < w and not out[ny, nx] and mag[ny, nx] > th.low:
                    out[ny, nx] = True
                    queue.append((ny, nx))
    return out


def test_threshold_validation():
    with pytest.raises(ValueError):
        Thresholds(0.2, 0.3)
    with pytest.raises(ValueError):
        Thresholds(1.2, 0.1)
    with pytest.raises(ValueError):
        Thresholds(0.5, -0.1)
    Thresholds(0.0, 0.0)


def test_empty_and_single_pixel():
    assert not hysteresis(np.zeros((5, 5)), Thresholds(0.5, 0.1)).any()
    mag = np.zeros((5, 5))
    mag[2, 3] = 0.7
    out = hysteresis(mag, Thresholds(0.5, 0.1))
    assert out.sum() == 1 and out[2, 3]


def test_row_example():
    row = np.array([[0.9, 0.3, 0.3, 0.3, 0.05]])
    out = hysteresis(row, Thresholds(0.8, 0.2))
    assert out.tolist() == [[True, True, True, True, False]]
    assert np.array_equal(out, reach_oracle(row, Thresholds(0.8, 0.2)))


def test_weak_is_strict_and_zero_low_excludes_zeros():
    mag = np.array([[0.5, 0.2, 0.0, 0.2]])
    assert hysteresis(mag, Thresholds(0.5, 0.2)).tolist() == [[True, False, False, False]]
    assert hysteresis(mag, Thresholds(0.5, 0.0)).tolist() == [[True, True, False, False]]


def test_diagonal_linking():
    mag = np.zeros((4, 4))
    mag[0, 0], mag[1, 1], mag[2, 2] = 0.9, 0.3, 0.3
    assert hysteresis(mag, Thresholds(0.8, 0.2)).sum() == 3


@settings(max_examples=200, deadline=None)
@given(
    arrays(np.float64, (16, 16), elements=st.floats(0, 1)),
    st.floats(0, 1),
    st.floats(0, 1),
)
def test_matches_reachability_oracle(mag, a, b):
    th = Thresholds(max(a, b), min(a, b))
    assert np.array_equal(hysteresis(mag, th), reach_oracle(mag, th))


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (10, 10), elements=st.floats(0, 1)), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_monotone_in_both_thresholds(mag, a, b, c):
    lo, mid, hi = sorted((a, b, c))
    base = hysteresis(mag, Thresholds(mid, lo))
    assert not (hysteresis(mag, Thresholds(hi, lo)) & ~base).any()
    assert not (hysteresis(mag, Thresholds(mid, mid)) & ~base).any()
    assert np.all(mag[base] > lo)


def test_canny_constant_image_empty():
    assert not canny_detect(RasterImage(np.full((20, 20), 0.5)), 1.0, Thresholds(0.2, 0.05)).any()


def test_canny_half_plane_single_line():
    img = RasterImage(half_plane_image((32, 32)))
    edges = canny_detect(img, 1.0, Thresholds(0.2, 0.05))
    cols = np.nonzero(edges.any(axis=0))[0]
    assert len(cols) == 1 and cols[0] in (15, 16)
    assert edges[:, cols[0]].all()


def test_canny_threshold_monotonicity_on_image():
    rng = np.random.default_rng(7)
    img = RasterImage(np.clip(half_plane_image((40, 40)) * 0.6 + rng.normal(0, 0.05, (40, 40)), 0, 1))
    low = canny_detect(img, 1.0, Thresholds(0.05, 0.02))
    mid = canny_detect(img, 1.0, Thresholds(0.1, 0.05))
    high = canny_detect(img, 1.0, Thresholds(0.2, 0.1))
    assert not (mid & ~low).any() and not (high & ~mid).any()
    assert high.sum() <= mid.sum() <= low.sum()


def test_fractile_thresholds():
    nms = np.zeros((4, 4))
    nms.flat[:10] = np.arange(1, 11) / 10
    th = thresholds_from_fractiles(nms, 0.9, 0.5)
    assert th.high == pytest.approx(np.quantile(np.arange(1, 11) / 10, 0.9))
    assert th.low == pytest.approx(np.quantile(np.arange(1, 11) / 10, 0.5))
    assert thresholds_from_fractiles(np.zeros((3, 3)), 0.9, 0.5) == Thresholds(1.0, 1.0)
    with pytest.raises(ValueError):
        thresholds_from_fractiles(nms, 1.5, 0.5)
