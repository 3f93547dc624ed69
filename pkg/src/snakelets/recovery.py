"""Recovery of broken edges in binary edge maps by growing snakelets from break endpoints."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage
from skimage.morphology import thin

from .canny import EIGHT_CONNECTED
from .gvf import DEFAULT_MU, VectorField, gvf_init, gvf_iterate, gvf_normalize
from .imagecore import GradientField, nonmax_suppress
from .snakelet import (
    Snakelet,
    SnakeletParams,
    State,
    arc_length,
    deform_step,
    grow,
    needs_resample,
    reached_edge,
    resample,
)

GRADIENT_ZERO_FRACTILE = 0.2

# Neighbour offsets (dx, dy) in row-major order.
_NEIGHBOURS = tuple((dx, dy) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dx, dy) != (0, 0))


@dataclass(frozen=True)
class EndPoint:
    position: tuple[int, int]  # (x, y)
    fragment_id: int


@dataclass(frozen=True)
class RecoveryParams:
    init_length: int = 25
    max_grow: float = 40.0
    gvf_init_iters: int = 5
    gvf_expand_step: int = 5
    gvf_max_iters: int = 50
    snap: float = 1.5
    mu: float = DEFAULT_MU

    def __post_init__(self) -> None:
        if self.init_length < 2:
            raise ValueError("init_length must be >= 2")
        if not self.max_grow > 0:
            raise ValueError("max_grow must be > 0")
        if self.gvf_init_iters < 0 or self.gvf_expand_step < 1:
            raise ValueError("gvf_init_iters must be >= 0 and gvf_expand_step >= 1")
        if self.gvf_init_iters > self.gvf_max_iters:
            raise ValueError("gvf_init_iters must not exceed gvf_max_iters")
        if self.snap <= 0:
            raise ValueError("snap must be > 0")

    def check_against(self, snake_params: SnakeletParams) -> None:
        if self.init_length < 2 * snake_params.spacing:
            raise ValueError("init_length must be at least twice the snakelet spacing")


@dataclass
class SnakeletSet:
    snakelets: list[Snakelet] = field(default_factory=list)
    shape: tuple[int, int] = (0, 0)

    def __len__(self) -> int:
        return len(self.snakelets)

    def __iter__(self):
        return iter(self.snakelets)

    def with_state(self, state: State) -> list[Snakelet]:
        return [s for s in self.snakelets if s.state == state]


# ------------------------------------------------------------------ topology


def neighbour_count(edges: np.ndarray) -> np.ndarray:
    e = edges.astype(np.int32)
    counts = ndimage.convolve(e, np.ones((3, 3), dtype=np.int32), mode="constant") - e
    return np.where(edges, counts, 0)


def needs_thinning(edges: np.ndarray) -> bool:
    """True when some edge pixel has 3+ neighbours without being a real junction.

    Staircase corners (a pixel whose removal keeps its neighbours connected)
    are the usual offenders in rasterized polylines.
    """
    edges = np.asarray(edges, dtype=bool)
    if not np.any(neighbour_count(edges) > 2):
        return False
    return not np.array_equal(thin(edges), edges)


def thin_edges(edges: np.ndarray) -> np.ndarray:
    edges = np.asarray(edges, dtype=bool)
    return thin(edges) if needs_thinning(edges) else edges.copy()


def label_fragments(edges: np.ndarray) -> np.ndarray:
    labels, _ = ndimage.label(edges, structure=EIGHT_CONNECTED)
    return labels


def find_endpoints(edges: np.ndarray) -> list[EndPoint]:
    """Edge pixels with exactly one 8-neighbour, in row-major order."""
    edges = thin_edges(edges)
    if not edges.any():
        return []
    labels = label_fragments(edges)
    ys, xs = np.nonzero(neighbour_count(edges) == 1)
    return [EndPoint((int(x), int(y)), int(labels[y, x])) for y, x in zip(ys, xs)]


def trace_back(edges: np.ndarray, ep: EndPoint, length: int) -> np.ndarray:
    """Walk up to ``length`` pixels along the fragment, away from the endpoint.

    Returns an ``(n, 2)`` float array of (x, y) ordered so that the last row is
    the endpoint.  At junctions the neighbour with the smallest change of
    direction wins, ties going to the first in row-major order.
    """
    edges = np.asarray(edges, dtype=bool)
    h, w = edges.shape
    x, y = ep.position
    if not edges[y, x]:
        raise ValueError(f"endpoint {ep.position} is not an edge pixel")
    path = [(x, y)]
    visited = {(x, y)}
    direction: Optional[tuple[float, float]] = None
    while len(path) < length:
        cx, cy = path[-1]
        candidates = [
            (cx + dx, cy + dy)
            for dx, dy in _NEIGHBOURS
            if 0 <= cx + dx < w and 0 <= cy + dy < h and edges[cy + dy, cx + dx] and (cx + dx, cy + dy) not in visited
        ]
        if not candidates:
            break
        if direction is None or len(candidates) == 1:
            nxt = candidates[0]
        else:
            nxt = min(candidates, key=lambda p: _turn(direction, (p[0] - cx, p[1] - cy)))
        d = (nxt[0] - cx, nxt[1] - cy)
        norm = math.hypot(*d)
        direction = (d[0] / norm, d[1] / norm)
        path.append(nxt)
        visited.add(nxt)
    if len(path) < 2:
        raise ValueError(f"fragment at {ep.position} is shorter than 2 pixels")
    return np.array(path[::-1], dtype=np.float64)


def _turn(direction: tuple[float, float], step: tuple[int, int]) -> float:
    norm = math.hypot(*step)
    cos = (direction[0] * step[0] + direction[1] * step[1]) / norm
    return math.acos(max(-1.0, min(1.0, cos)))


# ------------------------------------------------------------------ growing


def _pixel_mask(shape: tuple[int, int], pixels: np.ndarray) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    pix = np.rint(pixels).astype(np.intp)
    mask[pix[:, 1], pix[:, 0]] = True
    return mask


def _trim_to_length(points: np.ndarray, max_len: float) -> np.ndarray:
    """Keep the tail end of a pixel path whose arc length does not exceed ``max_len``."""
    seg = np.hypot(*np.diff(points, axis=0).T)
    from_tail = np.concatenate((np.cumsum(seg[::-1])[::-1], [0.0]))
    keep = from_tail <= max_len + 1e-9
    return points[keep] if keep.sum() >= 2 else points[-2:]


def grow_to_edge(
    initial: Snakelet,
    field: VectorField,
    targets: np.ndarray,
    exclude: Optional[np.ndarray],
    params: RecoveryParams,
    snake_params: SnakeletParams,
) -> Snakelet:
    """Alternate deformation and growth until the tail reaches a target pixel.

    Returns the snakelet in state ``REACHED`` or, when ``max_grow`` pixels of
    growth (or the iteration cap) are used up, in state ``GROWING``.
    """
    shape = field.shape
    s = initial
    start_len = s.length()
    limit = start_len + params.max_grow
    max_iters = int(math.ceil(params.max_grow / snake_params.step)) * 3 + 10
    for _ in range(max_iters):
        # the head sits on the source fragment; fixing it keeps tension from sliding
        # the initial part along the contour into the gap
        s = deform_step(s, field, snake_params, pin_head=True)
        s = grow(s, None, snake_params, shape=shape)
        if needs_resample(s, snake_params):
            s = resample(s, snake_params)
        length = s.length()
        if length > limit + snake_params.step:
            break
        if reached_edge(s, targets, params.snap, exclude)[1]:
            return s.with_points(s.points, state=State.REACHED)
        if length >= limit or s.state != State.GROWING:
            break
    return s.with_points(s.points, state=State.GROWING, grow_tail=True)


def recover(
    edges: np.ndarray,
    params: RecoveryParams = RecoveryParams(),
    snake_params: SnakeletParams = SnakeletParams(),
    grad: Optional[GradientField] = None,
    *,
    first_id: int = 0,
) -> SnakeletSet:
    """Grow a unidirectional snakelet from every break endpoint.

    Without ``grad`` the GVF is computed on the binary map itself; with it,
    on the normalized NMS magnitudes and with the weakest 20% of the field
    zeroed before unit normalization.  Snakelets that do not reach another
    part of the edge map within ``max_grow`` are restarted from their initial
    shape on an expanded GVF, and discarded once ``gvf_max_iters`` is spent.
    """
    params.check_against(snake_params)
    edges = thin_edges(np.asarray(edges, dtype=bool))
    shape = edges.shape
    if grad is not None and grad.shape != shape:
        raise ValueError(f"gradient field shape {grad.shape} does not match edge map {shape}")
    endpoints = find_endpoints(edges)
    if not endpoints:
        return SnakeletSet([], shape)

    initial: list[Snakelet] = []
    own: list[np.ndarray] = []
    for k, ep in enumerate(endpoints):
        try:
            path = trace_back(edges, ep, params.init_length)
        except ValueError:
            continue
        pts = _trim_to_length(path, params.init_length)
        s = Snakelet(pts, grow_head=False, grow_tail=True, source_id=ep.fragment_id, id=first_id + len(initial))
        if s.length() >= 2 * snake_params.spacing:
            s = resample(s, snake_params)
        initial.append(s)
        own.append(_pixel_mask(shape, path))

    if grad is not None:
        nms = nonmax_suppress(grad).data
        peak = nms.max()
        source = nms / peak if peak > 0 else nms
        fractile = GRADIENT_ZERO_FRACTILE
    else:
        source = edges.astype(np.float64)
        fractile = 0.0
    state = gvf_iterate(gvf_init(source, params.mu), params.gvf_init_iters)

    results: dict[int, Snakelet] = {}
    pending = list(range(len(initial)))
    while True:
        field = gvf_normalize(state, fractile)
        still = []
        for i in pending:
            out = grow_to_edge(initial[i], field, edges, own[i], params, snake_params)
            if out.state == State.REACHED:
                results[i] = out.with_points(out.points, gvf_iterations=state.iterations_done)
            else:
                still.append(i)
        pending = still
        if not pending or state.iterations_done >= params.gvf_max_iters:
            break
        state = gvf_iterate(state, min(params.gvf_expand_step, params.gvf_max_iters - state.iterations_done))
    for i in pending:
        results[i] = initial[i].with_points(
            initial[i].points, state=State.DISCARDED, grow_tail=False, gvf_iterations=state.iterations_done
        )
    return SnakeletSet([results[i] for i in range(len(initial))], shape)
