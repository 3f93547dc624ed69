"""Synthetic fixtures, break generation and tolerance-based edge scoring."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage
from skimage.morphology import thin

from .canny import EIGHT_CONNECTED
from .imagecore import GradientField, central_differences
from .recovery import neighbour_count

GAP_CLOSED_FRACTION = 0.8


@dataclass(frozen=True)
class BreakSpec:
    count: int
    min_len: int
    max_len: int
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.count < 0:
            raise ValueError("break count must be >= 0")
        if not 0 < self.min_len <= self.max_len:
            raise ValueError("break lengths must satisfy 0 < min_len <= max_len")


@dataclass
class Metrics:
    precision: float
    recall: float
    f1: float
    gap_closure_rate: float
    mean_contour_distance: float

    def report(self) -> str:
        return "".join(f"{k}: {v:.6f}\n" for k, v in asdict(self).items())


def parse_report(text: str) -> dict[str, float]:
    out = {}
    for line in text.splitlines():
        if ":" in line:
            key, value = line.split(":", 1)
            out[key.strip()] = float(value)
    return out


# ------------------------------------------------------------------- curves


def draw_curve(shape: tuple[int, int], xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Rasterize a densely sampled curve into a thin 8-connected edge map."""
    h, w = shape
    out = np.zeros(shape, dtype=bool)
    ix = np.rint(xs).astype(np.intp)
    iy = np.rint(ys).astype(np.intp)
    ok = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
    out[iy[ok], ix[ok]] = True
    return thin(out)


def ellipse_points(cx: float, cy: float, a: float, b: float, angle: float = 0.0, n: Optional[int] = None):
    n = n or int(8 * math.pi * max(a, b))
    t = np.linspace(0.0, 2 * math.pi, n, endpoint=False)
    ca, sa = math.cos(angle), math.sin(angle)
    x = a * np.cos(t)
    y = b * np.sin(t)
    return cx + ca * x - sa * y, cy + sa * x + ca * y


def ellipse_ring(shape=(200, 200), center=None, axes=(70.0, 45.0), angle: float = 0.3) -> np.ndarray:
    h, w = shape
    cx, cy = center if center is not None else ((w - 1) / 2.0, (h - 1) / 2.0)
    return draw_curve(shape, *ellipse_points(cx, cy, axes[0], axes[1], angle))


def u_shape_points(cx: float, top: float, bottom: float, radius: float, n: int = 4000):
    """Two vertical arms joined by a half circle at the bottom (y grows downward)."""
    arm = bottom - radius - top
    total = 2 * arm + math.pi * radius
    s = np.linspace(0.0, total, n)
    xs = np.empty_like(s)
    ys = np.empty_like(s)
    left = s <= arm
    xs[left], ys[left] = cx - radius, top + s[left]
    arc = (s > arm) & (s <= arm + math.pi * radius)
    phi = (s[arc] - arm) / radius
    xs[arc], ys[arc] = cx - radius * np.cos(phi), (bottom - radius) + radius * np.sin(phi)
    right = s > arm + math.pi * radius
    xs[right], ys[right] = cx + radius, (bottom - radius) - (s[right] - arm - math.pi * radius)
    return xs, ys


def u_shape(shape=(200, 200), radius: float = 50.0, top: float = 30.0, bottom: float = 175.0) -> np.ndarray:
    h, w = shape
    return draw_curve(shape, *u_shape_points((w - 1) / 2.0, top, bottom, radius))


def disk_image(shape, cx: float, cy: float, radius: float, inside: float = 1.0, outside: float = 0.0) -> np.ndarray:
    """Anti-aliased filled disk (4x4 supersampling)."""
    h, w = shape
    sub = (np.arange(4) + 0.5) / 4.0 - 0.5
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    cover = np.zeros(shape)
    for oy in sub:
        for ox in sub:
            cover += ((xx + ox - cx) ** 2 + (yy + oy - cy) ** 2) <= radius * radius
    cover /= 16.0
    return outside + (inside - outside) * cover


def circle_contour(shape, cx: float, cy: float, radius: float) -> np.ndarray:
    return draw_curve(shape, *ellipse_points(cx, cy, radius, radius))


def faded_ring_image(
    shape=(64, 64),
    radius: float = 20.0,
    fade_arc: float = 10.0,
    ramp_arc: float = 20.0,
    fade_angle: float = 0.0,
    floor: float = 0.02,
) -> tuple[np.ndarray, np.ndarray]:
    """Bright disk whose contrast to the background drops to ~0 over one sector.

    The disk is uniform; the background level varies with the polar angle so
    that the contrast is ``floor`` over ``fade_arc`` pixels of arc centred on
    ``fade_angle`` and ramps linearly back to full over ``ramp_arc`` pixels
    on both sides.  Keeping the disk uniform avoids spurious radial edges
    inside it.  Returns ``(image, true_contour)``.
    """
    h, w = shape
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    phi = np.arctan2(yy - cy, xx - cx)
    arc = np.abs(np.angle(np.exp(1j * (phi - fade_angle)))) * radius
    contrast = np.clip((arc - fade_arc / 2.0) / ramp_arc, 0.0, 1.0) * (1.0 - floor) + floor
    inside, full_contrast = 0.8, 0.6
    cover = disk_image(shape, cx, cy, radius)
    img = inside * cover + (inside - full_contrast * contrast) * (1.0 - cover)
    return img, circle_contour(shape, cx, cy, radius)


def contour_gradient(contour: np.ndarray, sigma: float = 1.5) -> GradientField:
    """Smooth gradient field whose magnitude ridge runs along ``contour``.

    The magnitude is the blurred contour scaled to peak 1; the orientation is
    the dominant direction of the local structure tensor of that blur, which
    points across the ridge and stays defined on the ridge itself.
    """
    mask = np.asarray(contour, dtype=np.float64)
    blur = ndimage.gaussian_filter(mask, sigma)
    peak = blur.max()
    if peak <= 0:
        zero = np.zeros(mask.shape)
        return GradientField(zero, zero.copy(), zero.copy(), zero.copy())
    mag = blur / peak
    dx, dy = central_differences(blur)
    a = ndimage.gaussian_filter(dx * dx, sigma)
    b = ndimage.gaussian_filter(dx * dy, sigma)
    c = ndimage.gaussian_filter(dy * dy, sigma)
    theta = np.mod(0.5 * np.arctan2(2.0 * b, a - c), math.pi)
    return GradientField(mag * np.cos(theta), mag * np.sin(theta), mag, theta)


def half_plane_image(shape=(64, 64), column: Optional[int] = None) -> np.ndarray:
    h, w = shape
    col = w // 2 if column is None else column
    img = np.zeros(shape)
    img[:, col:] = 1.0
    return img


def scene_image(shape=(321, 481), seed: int = 0, noise: float = 0.02) -> np.ndarray:
    """Gray scene with a few ellipses and rectangles plus mild noise."""
    rng = np.random.default_rng(seed)
    h, w = shape
    img = np.full(shape, 0.35)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    for cx, cy, a, b, level in ((120, 110, 70, 45, 0.8), (330, 200, 90, 60, 0.1), (380, 80, 40, 30, 0.65)):
        img[((xx - cx) / a) ** 2 + ((yy - cy) / b) ** 2 <= 1.0] = level
    img[220:290, 60:200] = 0.6
    img[30:70, 230:300] = 0.15
    img = ndimage.gaussian_filter(img, 0.7)
    img += rng.normal(0.0, noise, shape)
    return np.clip(img, 0.0, 1.0)


# ------------------------------------------------------------------- breaks


def order_fragment(edges: np.ndarray, labels: np.ndarray, label: int) -> tuple[list[tuple[int, int]], bool]:
    """Pixels (x, y) of one thin fragment in walk order, and whether it is closed."""
    ys, xs = np.nonzero(labels == label)
    pixels = set(zip(xs.tolist(), ys.tolist()))
    counts = neighbour_count(edges)
    ends = sorted((p for p in pixels if counts[p[1], p[0]] == 1), key=lambda p: (p[1], p[0]))
    start = ends[0] if ends else min(pixels, key=lambda p: (p[1], p[0]))
    order = [start]
    seen = {start}
    while True:
        cx, cy = order[-1]
        nxt = None
        # prefer 4-neighbours so diagonal shortcuts do not skip pixels
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, 1), (1, -1), (-1, -1)):
            p = (cx + dx, cy + dy)
            if p in pixels and p not in seen:
                nxt = p
                break
        if nxt is None:
            break
        order.append(nxt)
        seen.add(nxt)
    return order, not ends


def make_breaks(edges: np.ndarray, spec: BreakSpec, margin: int = 3) -> tuple[np.ndarray, list[np.ndarray]]:
    """Remove ``spec.count`` disjoint runs of contiguous edge pixels.

    Each run lies inside a single fragment, keeps at least ``margin`` pixels
    to every other run and, on open fragments, to the fragment ends.  Returns
    the broken map and the removed runs as ``(k, 2)`` arrays of (x, y).
    """
    edges = np.asarray(edges, dtype=bool)
    if spec.count == 0:
        return edges.copy(), []
    if not edges.any():
        raise ValueError("cannot place breaks in an empty edge map")
    labels, count = ndimage.label(edges, structure=EIGHT_CONNECTED)
    fragments = [order_fragment(edges, labels, k) for k in range(1, count + 1)]
    rng = np.random.default_rng(spec.rng_seed)
    used = [np.zeros(len(f[0]), dtype=bool) for f in fragments]
    sizes = np.array([len(f[0]) for f in fragments], dtype=np.float64)
    gaps: list[np.ndarray] = []
    broken = edges.copy()
    for _ in range(spec.count):
        length = int(rng.integers(spec.min_len, spec.max_len + 1))
        for _attempt in range(1000):
            k = int(rng.choice(len(fragments), p=sizes / sizes.sum()))
            order, closed = fragments[k]
            n = len(order)
            if closed:
                if length + 2 * margin > n:
                    continue
                start = int(rng.integers(0, n))
                idx = (start + np.arange(-margin, length + margin)) % n
            else:
                lo, hi = margin, n - margin - length
                if hi < lo:
                    continue
                start = int(rng.integers(lo, hi + 1))
                idx = np.arange(max(start - margin, 0), min(start + length + margin, n))
            if used[k][idx].any():
                continue
            run = (start + np.arange(length)) % n
            used[k][idx] = True
            pix = np.array([order[i] for i in run], dtype=np.int64)
            broken[pix[:, 1], pix[:, 0]] = False
            gaps.append(pix)
            break
        else:
            raise ValueError(
                f"cannot place {spec.count} disjoint breaks of length {spec.min_len}-{spec.max_len} "
                f"with margin {margin} in this edge map"
            )
    return broken, gaps


# ------------------------------------------------------------------ scoring


def distance_to(mask: np.ndarray) -> np.ndarray:
    """Euclidean distance from every pixel to the nearest True pixel of ``mask``."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return np.full(mask.shape, np.inf)
    return ndimage.distance_transform_edt(~mask)


def score(
    result: np.ndarray,
    truth: np.ndarray,
    tolerance: float,
    gaps: Optional[Sequence[np.ndarray]] = None,
) -> Metrics:
    """Tolerance-matched precision/recall plus gap closure.

    An empty result has precision 1 (nothing claimed wrongly) and mean
    distance 0; with no gaps the closure rate is 1.
    """
    result = np.asarray(result, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if result.shape != truth.shape:
        raise ValueError(f"shape mismatch: result {result.shape} vs truth {truth.shape}")
    to_truth = distance_to(truth)
    to_result = distance_to(result)
    n_result = int(result.sum())
    n_truth = int(truth.sum())
    if n_result:
        d = to_truth[result]
        precision = float(np.mean(d <= tolerance))
        mean_dist = float(d.mean())
    else:
        precision, mean_dist = 1.0, 0.0
    recall = float(np.mean(to_result[truth] <= tolerance)) if n_truth else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    if gaps:
        closed = [np.mean(to_result[g[:, 1], g[:, 0]] <= tolerance) >= GAP_CLOSED_FRACTION for g in gaps]
        closure = float(np.mean(closed))
    else:
        closure = 1.0
    return Metrics(precision, recall, f1, closure, mean_dist)
