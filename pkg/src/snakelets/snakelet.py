"""Open active contours that deform under GVF and grow at their ends."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Iterable, Optional, Sequence, Union

import numpy as np
from scipy.linalg import cho_solve_banded, cholesky_banded

from .gvf import VectorField
from .imagecore import GradientField, bilinear


class State(str, enum.Enum):
    GROWING = "growing"
    REACHED = "reached"
    DISCARDED = "discarded"
    STOPPED = "stopped"


@dataclass(frozen=True)
class SnakeletParams:
    """Internal weights and growth geometry.

    ``alpha`` weighs tension (first differences), ``beta`` rigidity (second
    differences), ``gamma`` the growing force.  ``kappa`` scales the GVF
    displacement per step, ``spacing`` is the target point distance and
    ``step`` the distance a growing end advances per growth.
    ``curvature_window`` is the arc length near each end over which the
    turning rate is fitted to bend the growth direction; 0 grows straight
    along the last segment.
    """

    alpha: float = 0.05
    beta: float = 0.5
    gamma: float = 2.0
    spacing: float = 2.0
    kappa: float = 1.0
    step: float = 2.0
    curvature_window: float = 30.0

    def __post_init__(self) -> None:
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be >= 0")
        if not self.gamma > 0:
            raise ValueError("gamma must be > 0")
        if self.spacing < 1 or self.step < 1:
            raise ValueError("spacing and step must be >= 1 pixel")
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")
        if self.curvature_window < 0:
            raise ValueError("curvature_window must be >= 0")


@dataclass
class Snakelet:
    points: np.ndarray  # (n, 2) float array of (x, y)
    grow_head: bool = False
    grow_tail: bool = True
    state: State = State.GROWING
    source_id: int = 0
    id: int = 0
    parent_id: Optional[int] = None
    gvf_iterations: int = 0

    def __post_init__(self) -> None:
        pts = np.array(self.points, dtype=np.float64).reshape(-1, 2)
        if len(pts) < 2:
            raise ValueError("a snakelet needs at least 2 points")
        self.points = pts

    @property
    def head(self) -> np.ndarray:
        return self.points[0]

    @property
    def tail(self) -> np.ndarray:
        return self.points[-1]

    def length(self) -> float:
        return arc_length(self.points)

    def with_points(self, points: np.ndarray, **changes) -> "Snakelet":
        return replace(self, points=points, **changes)


def arc_length(points: np.ndarray) -> float:
    d = np.diff(np.asarray(points, dtype=np.float64), axis=0)
    return float(np.hypot(d[:, 0], d[:, 1]).sum())


def _segment_lengths(points: np.ndarray) -> np.ndarray:
    d = np.diff(points, axis=0)
    return np.hypot(d[:, 0], d[:, 1])


# ------------------------------------------------------------------ resampling


def resample(s: Snakelet, params: SnakeletParams) -> Snakelet:
    """Redistribute points uniformly in arc length, keeping both endpoints.

    The chain is split into ``round(L / spacing)`` equal pieces, so spacing
    stays within a factor of 1.5 of the target for any chain longer than it.
    """
    pts = s.points
    seg = _segment_lengths(pts)
    total = float(seg.sum())
    if total <= 0:
        raise ValueError("cannot resample a snakelet of zero length")
    keep = np.concatenate(([True], seg > 0))
    pts = pts[keep]
    cum = np.concatenate(([0.0], np.cumsum(seg[seg > 0])))
    n_seg = max(1, int(math.floor(total / params.spacing + 0.5)))
    targets = np.linspace(0.0, cum[-1], n_seg + 1)
    out = np.empty((n_seg + 1, 2))
    out[:, 0] = np.interp(targets, cum, pts[:, 0])
    out[:, 1] = np.interp(targets, cum, pts[:, 1])
    out[0] = s.points[0]
    out[-1] = s.points[-1]
    return s.with_points(out)


def needs_resample(s: Snakelet, params: SnakeletParams) -> bool:
    seg = _segment_lengths(s.points)
    return bool(seg.min() < 0.5 * params.spacing or seg.max() > 1.5 * params.spacing)


# ------------------------------------------------------------ internal forces


def internal_matrix(n: int, alpha: float, beta: float) -> np.ndarray:
    """Dense ``A`` with ``x^T A x = alpha*sum|x[i+1]-x[i]|^2 + beta*sum|x[i-1]-2x[i]+x[i+1]|^2``.

    The rigidity sum runs over interior points only, i.e. the rigidity
    weight is zero at both open ends.
    """
    eye = np.eye(n)
    d1 = np.diff(eye, 1, axis=0)
    d2 = np.diff(eye, 2, axis=0)
    return alpha * d1.T @ d1 + beta * d2.T @ d2


@lru_cache(maxsize=256)
def _factor(n: int, alpha: float, beta: float, pin_head: bool) -> np.ndarray:
    m = internal_matrix(n, alpha, beta) + np.eye(n)
    if pin_head:
        m = m[1:, 1:]
    size = m.shape[0]
    bands = np.zeros((3, size))
    for k in range(3):
        if k < size:
            bands[2 - k, k:] = np.diagonal(m, k)
    factor = cholesky_banded(bands, lower=False)
    factor.setflags(write=False)
    return factor


@lru_cache(maxsize=256)
def _head_column(n: int, alpha: float, beta: float) -> np.ndarray:
    col = internal_matrix(n, alpha, beta)[1:, 0]
    col.setflags(write=False)
    return col


def deform_step(
    s: Snakelet,
    field: VectorField,
    params: SnakeletParams,
    pin_head: bool = False,
) -> Snakelet:
    """One semi-implicit step ``(A + I) x_new = x + kappa * F(x)``.

    ``F`` is the external field sampled bilinearly at the current points.
    With ``pin_head`` the first point is held fixed and the system is solved
    for the remaining ones.  Results are clamped to the image.
    """
    pts = s.points
    n = len(pts)
    h, w = field.shape
    fx = bilinear(field.u, pts[:, 0], pts[:, 1])
    fy = bilinear(field.v, pts[:, 0], pts[:, 1])
    rhs = pts + params.kappa * np.column_stack((fx, fy))
    if pin_head:
        rhs = rhs[1:] - np.outer(_head_column(n, params.alpha, params.beta), pts[0])
        sol = cho_solve_banded((_factor(n, params.alpha, params.beta, True), False), rhs)
        new = np.vstack((pts[:1], sol))
    else:
        new = cho_solve_banded((_factor(n, params.alpha, params.beta, False), False), rhs)
    np.clip(new[:, 0], 0.0, w - 1, out=new[:, 0])
    np.clip(new[:, 1], 0.0, h - 1, out=new[:, 1])
    return s.with_points(new)


# ------------------------------------------------------------------- growth


def end_tangent(points: np.ndarray, at_tail: bool = True) -> np.ndarray:
    """Unit vector pointing outward at one end, from the last two distinct points."""
    pts = points if at_tail else points[::-1]
    end = pts[-1]
    for prev in pts[-2::-1]:
        d = end - prev
        norm = math.hypot(d[0], d[1])
        if norm > 1e-12:
            return d / norm
    return np.zeros(2)


def growth_direction(points: np.ndarray, at_tail: bool = True, window: float = 0.0, step: float = 2.0) -> np.ndarray:
    """Unit growth direction at one end, following the local turning rate.

    Segment angles over the last ``window`` pixels of arc are fitted linearly
    against arc length and extrapolated half a ``step`` past the end, so a
    chain on a circle keeps bending.  With fewer than three segments in the
    window this falls back to :func:`end_tangent`.
    """
    pts = np.asarray(points if at_tail else points[::-1], dtype=np.float64)
    seg = np.diff(pts, axis=0)
    ln = np.hypot(seg[:, 0], seg[:, 1])
    good = ln > 1e-12
    seg, ln = seg[good], ln[good]
    if window <= 0 or len(seg) < 3:
        return end_tangent(pts)
    k = min(int(np.searchsorted(np.cumsum(ln[::-1]), window)) + 1, len(seg))
    if k < 3:
        return end_tangent(pts)
    seg, ln = seg[-k:], ln[-k:]
    angle = np.unwrap(np.arctan2(seg[:, 1], seg[:, 0]))
    mid = np.cumsum(ln) - ln / 2
    slope, offset = np.polyfit(mid, angle, 1, w=np.sqrt(ln))
    theta = offset + slope * (mid[-1] + ln[-1] / 2 + step / 2)
    return np.array([math.cos(theta), math.sin(theta)])


MagnitudeSource = Union[GradientField, np.ndarray, None]


def _magnitude_plane(source: MagnitudeSource) -> Optional[np.ndarray]:
    if source is None:
        return None
    if isinstance(source, GradientField):
        return source.magnitude
    return np.asarray(source, dtype=np.float64)


def grow(
    s: Snakelet,
    grad: MagnitudeSource,
    params: SnakeletParams,
    *,
    shape: Optional[tuple[int, int]] = None,
    min_force: Optional[float] = None,
) -> Snakelet:
    """Append one point at ``step`` pixels along the growth direction of each growing end.

    The growing force at an end is ``gamma`` times the magnitude sampled at
    the candidate point (``grad`` given) or ``gamma`` (binary mode).  When
    ``min_force`` is set and the force does not exceed it, the end stops
    instead of growing; an end clamped against the image border also stops
    after its (clamped) point is appended.  With both ends stopped the state
    becomes ``STOPPED``.
    """
    if s.state != State.GROWING:
        raise ValueError(f"cannot grow a snakelet in state {s.state.value}")
    plane = _magnitude_plane(grad)
    if shape is None and plane is not None:
        shape = plane.shape
    pts = s.points
    grow_head, grow_tail = s.grow_head, s.grow_tail
    new_head = new_tail = None
    for at_tail in (False, True):
        if not (grow_tail if at_tail else grow_head):
            continue
        end = pts[-1] if at_tail else pts[0]
        cand = end + params.step * growth_direction(pts, at_tail, params.curvature_window, params.step)
        if shape is not None:
            cand = np.array([min(max(cand[0], 0.0), shape[1] - 1), min(max(cand[1], 0.0), shape[0] - 1)])
        force = params.gamma * (float(bilinear(plane, cand[0], cand[1])) if plane is not None else 1.0)
        if min_force is not None and force <= min_force:
            if at_tail:
                grow_tail = False
            else:
                grow_head = False
            continue
        if math.hypot(*(cand - end)) < 0.25 * params.step:
            if at_tail:
                grow_tail = False
            else:
                grow_head = False
        if at_tail:
            new_tail = cand
        else:
            new_head = cand
    parts = []
    if new_head is not None:
        parts.append(new_head[None, :])
    parts.append(pts)
    if new_tail is not None:
        parts.append(new_tail[None, :])
    state = s.state if (grow_head or grow_tail) else State.STOPPED
    return s.with_points(np.vstack(parts), grow_head=grow_head, grow_tail=grow_tail, state=state)


# ------------------------------------------------------------- rasterization


def supercover_segment(p0: Sequence[float], p1: Sequence[float]) -> np.ndarray:
    """Integer pixels (x, y) whose closed unit square meets the segment p0-p1."""
    x0, y0 = float(p0[0]), float(p0[1])
    x1, y1 = float(p1[0]), float(p1[1])
    # pixel i spans [i - 0.5, i + 0.5]
    xs = np.arange(math.ceil(min(x0, x1) - 0.5 - 1e-9), math.floor(max(x0, x1) + 0.5 + 1e-9) + 1)
    ys = np.arange(math.ceil(min(y0, y1) - 0.5 - 1e-9), math.floor(max(y0, y1) + 0.5 + 1e-9) + 1)
    gx, gy = np.meshgrid(xs, ys)
    gx = gx.ravel()
    gy = gy.ravel()
    dx, dy = x1 - x0, y1 - y0
    # separating axis: the segment normal; box axes are already covered by the candidate range
    nx, ny = -dy, dx
    centre = nx * (gx - x0) + ny * (gy - y0)
    radius = 0.5 * (abs(nx) + abs(ny))
    hit = np.abs(centre) <= radius + 1e-9
    return np.column_stack((gx[hit], gy[hit])).astype(np.int64)


def polyline_pixels(points: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Supercover pixels of a polyline, clipped to ``shape``; may contain duplicates."""
    pts = np.asarray(points, dtype=np.float64)
    chunks = [supercover_segment(pts[i], pts[i + 1]) for i in range(len(pts) - 1)]
    pix = np.vstack(chunks) if chunks else np.empty((0, 2), dtype=np.int64)
    h, w = shape
    ok = (pix[:, 0] >= 0) & (pix[:, 0] < w) & (pix[:, 1] >= 0) & (pix[:, 1] < h)
    return pix[ok]


def disc_offsets(radius: int) -> np.ndarray:
    r = int(radius)
    dy, dx = np.mgrid[-r : r + 1, -r : r + 1]
    inside = dx * dx + dy * dy <= r * r
    return np.column_stack((dx[inside], dy[inside]))


class OccupancyMask:
    """Pixels swept by registered snakelets.

    ``occupied`` is the rasterization dilated by a disc of ``radius``;
    ``owner`` holds, for the undilated rasterization, the id of the first
    snakelet that covered each pixel (-1 where none did).
    """

    def __init__(self, shape: tuple[int, int], radius: int = 2):
        if radius < 0:
            raise ValueError("radius must be >= 0")
        self.shape = (int(shape[0]), int(shape[1]))
        self.radius = int(radius)
        self.occupied = np.zeros(self.shape, dtype=bool)
        self.owner = np.full(self.shape, -1, dtype=np.int64)
        self._disc = disc_offsets(self.radius)

    @property
    def lines(self) -> np.ndarray:
        return self.owner >= 0

    def register(self, s: Snakelet) -> "OccupancyMask":
        h, w = self.shape
        pix = polyline_pixels(s.points, self.shape)
        free = self.owner[pix[:, 1], pix[:, 0]] < 0
        self.owner[pix[free, 1], pix[free, 0]] = s.id
        grown = (pix[:, None, :] + self._disc[None, :, :]).reshape(-1, 2)
        ok = (grown[:, 0] >= 0) & (grown[:, 0] < w) & (grown[:, 1] >= 0) & (grown[:, 1] < h)
        grown = grown[ok]
        self.occupied[grown[:, 1], grown[:, 0]] = True
        return self


def register(mask: OccupancyMask, s: Snakelet) -> OccupancyMask:
    """Mark the snakelet's swept pixels in ``mask`` (mutates and returns it)."""
    return mask.register(s)


def reached_edge(
    s: Snakelet,
    targets: np.ndarray,
    snap: float = 1.5,
    exclude: Optional[np.ndarray] = None,
) -> tuple[bool, bool]:
    """Whether each growing end lies within ``snap`` of a target pixel.

    ``exclude`` marks pixels that belong to the snakelet's own source and do
    not count.  Returns ``(head, tail)``; a non-growing end reports False.
    """
    targets = np.asarray(targets, dtype=bool)
    h, w = targets.shape
    r = int(math.floor(snap))
    out = []
    for growing, end in ((s.grow_head, s.points[0]), (s.grow_tail, s.points[-1])):
        if not growing:
            out.append(False)
            continue
        cx, cy = int(round(end[0])), int(round(end[1]))
        x_lo, x_hi = max(cx - r - 1, 0), min(cx + r + 2, w)
        y_lo, y_hi = max(cy - r - 1, 0), min(cy + r + 2, h)
        win = targets[y_lo:y_hi, x_lo:x_hi]
        if exclude is not None:
            win = win & ~exclude[y_lo:y_hi, x_lo:x_hi]
        ys, xs = np.nonzero(win)
        if len(xs) == 0:
            out.append(False)
            continue
        d2 = (xs + x_lo - end[0]) ** 2 + (ys + y_lo - end[1]) ** 2
        out.append(bool(d2.min() <= snap * snap))
    return out[0], out[1]


# ------------------------------------------------------------- serialization


def to_record(s: Snakelet) -> str:
    """One-line JSON record with coordinates at fixed 3-decimal precision."""
    pts = ", ".join(f"[{x:.3f}, {y:.3f}]" for x, y in s.points)
    parent = "null" if s.parent_id is None else str(int(s.parent_id))
    return (
        f'{{"id": {int(s.id)}, "source_id": {int(s.source_id)}, "parent_id": {parent}, '
        f'"state": "{s.state.value}", "grow_head": {json.dumps(bool(s.grow_head))}, '
        f'"grow_tail": {json.dumps(bool(s.grow_tail))}, "gvf_iterations": {int(s.gvf_iterations)}, '
        f'"points": [{pts}]}}'
    )


def from_record(line: str) -> Snakelet:
    rec = json.loads(line)
    return Snakelet(
        points=np.array(rec["points"], dtype=np.float64),
        grow_head=rec["grow_head"],
        grow_tail=rec["grow_tail"],
        state=State(rec["state"]),
        source_id=rec["source_id"],
        id=rec["id"],
        parent_id=rec.get("parent_id"),
        gvf_iterations=rec.get("gvf_iterations", 0),
    )


def write_records(path, snakelets: Iterable[Snakelet]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in snakelets:
            fh.write(to_record(s) + "\n")


def read_records(path) -> list[Snakelet]:
    with open(path, encoding="utf-8") as fh:
        return [from_record(line) for line in fh if line.strip()]
