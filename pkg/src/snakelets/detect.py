"""Snakelet edge detection: seeded, chained snakelet growth instead of hysteresis linking."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

from .canny import Thresholds
from .gvf import DEFAULT_MU, VectorField, gvf_init, gvf_iterate, gvf_normalize
from .imagecore import GradientField, RasterImage, as_plane, bilinear, gradient, nonmax_suppress
from .recovery import GRADIENT_ZERO_FRACTILE, RecoveryParams, SnakeletSet, recover
from .snakelet import (
    OccupancyMask,
    Snakelet,
    SnakeletParams,
    State,
    deform_step,
    grow,
    growth_direction,
    needs_resample,
    polyline_pixels,
    reached_edge,
    resample,
)

MIN_SNAKELET_LENGTH = 4.0


@dataclass(frozen=True)
class DetectParams:
    sigma: float = 1.0
    th: Thresholds = Thresholds(0.1, 0.04)
    seed_init_length: float = 12.0
    chain_max_grow: float = 40.0
    gvf_iters: int = 4
    coverage_radius: int = 2
    snap: float = 1.5
    mu: float = DEFAULT_MU
    snake: SnakeletParams = field(default_factory=SnakeletParams)
    recovery: Optional[RecoveryParams] = field(default_factory=RecoveryParams)

    def __post_init__(self) -> None:
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if not (self.seed_init_length > 0 and self.chain_max_grow > 0):
            raise ValueError("seed_init_length and chain_max_grow must be positive")
        if self.gvf_iters < 0 or self.coverage_radius < 0:
            raise ValueError("gvf_iters and coverage_radius must be >= 0")


def select_seeds(nms, th: Thresholds) -> list[tuple[int, int]]:
    """Pixels (x, y) with NMS value >= ``th.high``, strongest first, ties row-major."""
    mag = as_plane(nms)
    ys, xs = np.nonzero(mag >= th.high)
    if len(xs) == 0:
        return []
    flat = ys * mag.shape[1] + xs
    order = np.lexsort((flat, -mag[ys, xs]))
    return [(int(xs[i]), int(ys[i])) for i in order]


def rasterize(snakelets, shape: Optional[tuple[int, int]] = None) -> np.ndarray:
    """Union of the supercover rasterizations of all snakelet polylines."""
    if isinstance(snakelets, SnakeletSet):
        shape = shape or snakelets.shape
        snakelets = snakelets.snakelets
    if shape is None:
        raise ValueError("shape is required when rasterizing a plain list of snakelets")
    out = np.zeros(shape, dtype=bool)
    for s in snakelets:
        pix = polyline_pixels(s.points, shape)
        out[pix[:, 1], pix[:, 0]] = True
    return out


class _Tracker:
    """Per-image state of the detection loop."""

    def __init__(self, field: VectorField, stop_map: np.ndarray, params: DetectParams):
        self.field = field
        self.stop_map = stop_map
        self.params = params
        self.shape = stop_map.shape
        self.mask = OccupancyMask(self.shape, params.coverage_radius)
        self.kept: list[Snakelet] = []
        self.next_id = 0

    def start(self, origin: np.ndarray, direction: np.ndarray, source_id: int, parent_id: Optional[int]):
        sp = self.params.snake
        h, w = self.shape
        second = origin + sp.step * direction
        second = np.array([min(max(second[0], 0.0), w - 1), min(max(second[1], 0.0), h - 1)])
        if math.hypot(*(second - origin)) < 0.5 * sp.step:
            return None
        if sp.gamma * self._stop_value(second) <= sp.gamma * self.params.th.low:
            return None
        s = Snakelet(np.vstack((origin, second)), grow_head=False, grow_tail=True,
                     source_id=source_id, id=self.next_id, parent_id=parent_id)
        self.next_id += 1
        return s

    def direction(self, s: Snakelet) -> np.ndarray:
        sp = self.params.snake
        return growth_direction(s.points, True, sp.curvature_window, sp.step)

    def _stop_value(self, p: np.ndarray) -> float:
        return float(bilinear(self.stop_map, p[0], p[1]))

    def extend(self, s: Snakelet, max_length: float, relatives: tuple[int, ...]) -> Snakelet:
        """Grow ``s`` until it stops, reaches a registered snakelet or hits ``max_length``.

        Returns the snakelet with state ``REACHED``, ``STOPPED`` or, when it
        ran out of length while still able to grow, ``GROWING``.
        """
        sp = self.params.snake
        exclude = np.isin(self.mask.owner, relatives) if relatives else None
        min_force = sp.gamma * self.params.th.low
        max_iters = int(math.ceil(max_length / sp.step)) * 3 + 10
        for _ in range(max_iters):
            if s.length() >= max_length:
                return s
            s = deform_step(s, self.field, sp, pin_head=True)
            s = grow(s, self.stop_map, sp, shape=self.shape, min_force=min_force)
            if needs_resample(s, sp) and s.length() > 0:
                s = resample(s, sp)
            if s.state != State.GROWING:
                return s
            if reached_edge(s, self.mask.lines, self.params.snap, exclude)[1]:
                return s.with_points(s.points, state=State.REACHED, grow_tail=False)
        return s.with_points(s.points, state=State.STOPPED, grow_tail=False)

    def finalize(self, s: Snakelet) -> bool:
        if s.length() < MIN_SNAKELET_LENGTH:
            return False
        self.kept.append(s)
        self.mask.register(s)
        return True

    def run_chain(self, s: Snakelet, relatives: tuple[int, ...]) -> None:
        """Grow a seed snakelet's continuation links until the chain stops."""
        p = self.params
        while s is not None:
            s = self.extend(s, p.chain_max_grow, relatives)
            if s.state == State.GROWING:
                s = s.with_points(s.points, state=State.STOPPED, grow_tail=False)
                if not self.finalize(s):
                    return
                child = self.start(s.points[-1].copy(), self.direction(s), s.source_id, s.id)
                relatives = (s.id,)
                s = child
            else:
                self.finalize(s)
                return


def detect(img: RasterImage, params: DetectParams = DetectParams(), grad: Optional[GradientField] = None) -> SnakeletSet:
    """Detect edges as a set of snakelets.

    Seeds are NMS pixels >= TH in decreasing magnitude.  Each uncovered seed
    spawns two snakelets growing in opposite directions along the edge
    (perpendicular to the gradient).  Growth continues in links of at most
    ``chain_max_grow`` pixels while the magnitude at the new end stays above
    TL and no registered snakelet is reached.  A final recovery pass closes
    remaining breaks.
    """
    if img.channels not in (1, 3):
        raise ValueError(f"unsupported channel count {img.channels}")
    grad = grad if grad is not None else gradient(img, params.sigma)
    nms = nonmax_suppress(grad).data
    shape = nms.shape
    peak = nms.max()
    if peak <= 0:
        return SnakeletSet([], shape)
    state = gvf_iterate(gvf_init(nms / peak, params.mu), params.gvf_iters)
    field_ = gvf_normalize(state, GRADIENT_ZERO_FRACTILE)
    # TL test on NMS dilated by one pixel, so a subpixel end sitting next to
    # the one-pixel-wide ridge still sees the ridge value
    stop_map = ndimage.grey_dilation(nms, size=(3, 3), mode="nearest")
    tracker = _Tracker(field_, stop_map, params)

    for seed_id, (x, y) in enumerate(select_seeds(nms, params.th)):
        if tracker.mask.occupied[y, x]:
            continue
        theta = grad.orientation[y, x]
        along = np.array([-math.sin(theta), math.cos(theta)])
        origin = np.array([float(x), float(y)])
        pieces = []
        for sign in (1.0, -1.0):
            s = tracker.start(origin, sign * along, seed_id, None)
            if s is None:
                continue
            sibling = tuple(q.id for q in pieces)
            s = tracker.extend(s, params.seed_init_length, sibling)
            pieces.append(s)
        # register both initial pieces before either continues
        live = []
        for s in pieces:
            still_growing = s.state == State.GROWING
            if still_growing:
                s = s.with_points(s.points, state=State.STOPPED, grow_tail=False)
            if tracker.finalize(s) and still_growing:
                live.append(s)
        for s in live:
            child = tracker.start(s.points[-1].copy(), tracker.direction(s), seed_id, s.id)
            if child is not None:
                tracker.run_chain(child, (s.id,))

    snakelets = list(tracker.kept)
    if params.recovery is not None and snakelets:
        edges = rasterize(snakelets, shape)
        rec = recover(edges, params.recovery, params.snake, grad, first_id=tracker.next_id)
        snakelets.extend(r for r in rec if r.state == State.REACHED)
    return SnakeletSet(snakelets, shape)
