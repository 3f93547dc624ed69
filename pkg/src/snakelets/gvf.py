"""Gradient Vector Flow over gray or binary edge maps.

The field is computed with Jacobi sweeps of

    u <- (u + mu * lap(u) + b * fx) / (1 + b),    b = fx**2 + fy**2

(and the same for v): explicit in the diffusion, implicit in the data term.
The fixed point is that of the plain explicit update
``u + mu * lap(u) - (u - fx) * b``, but for ``mu <= 0.25`` every sweep is a
convex combination of neighbour values and ``fx``, so the field stays
bounded by the source gradient whatever the size of ``b``.  A ``GvfState``
keeps the source gradient so that the iteration count can be raised later
without starting over.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .imagecore import ImageLike, as_plane, central_differences

DEFAULT_MU = 0.2
NORMALIZE_EPS = 1e-12


@dataclass
class VectorField:
    u: np.ndarray
    v: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.u.shape

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u, self.v)


@dataclass
class GvfState:
    field: VectorField
    fx: np.ndarray
    fy: np.ndarray
    b: np.ndarray
    iterations_done: int
    mu: float


def gvf_init(edge_source: ImageLike, mu: float = DEFAULT_MU) -> GvfState:
    if not mu > 0:
        raise ValueError(f"mu must be > 0, got {mu}")
    source = as_plane(edge_source)
    fx, fy = central_differences(source)
    return GvfState(
        field=VectorField(fx.copy(), fy.copy()),
        fx=fx,
        fy=fy,
        b=fx * fx + fy * fy,
        iterations_done=0,
        mu=float(mu),
    )


def _laplacian(a: np.ndarray) -> np.ndarray:
    p = np.pad(a, 1, mode="edge")
    return p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:] - 4.0 * a


def gvf_iterate(state: GvfState, n: int) -> GvfState:
    """Return a new state advanced by ``n`` sweeps; ``state`` is left untouched."""
    if n < 0:
        raise ValueError(f"iteration count must be >= 0, got {n}")
    u = state.field.u.copy()
    v = state.field.v.copy()
    mu, b, fx, fy = state.mu, state.b, state.fx, state.fy
    bfx, bfy, denom = b * fx, b * fy, 1.0 + b
    for _ in range(n):
        u = (u + mu * _laplacian(u) + bfx) / denom
        v = (v + mu * _laplacian(v) + bfy) / denom
    return replace(state, field=VectorField(u, v), iterations_done=state.iterations_done + n)


def gvf_normalize(state: GvfState, zero_fractile: float = 0.0) -> VectorField:
    """Unit-length field with the weakest ``zero_fractile`` of vectors zeroed.

    The quantile is taken over strictly positive magnitudes only, so a large
    empty background does not swallow the fractile.
    """
    if not 0.0 <= zero_fractile < 1.0:
        raise ValueError(f"zero_fractile must be in [0, 1), got {zero_fractile}")
    u, v = state.field.u, state.field.v
    mag = np.hypot(u, v)
    keep = mag > 0
    if zero_fractile > 0 and keep.any():
        cutoff = np.quantile(mag[keep], zero_fractile)
        keep &= mag >= cutoff
    scale = np.where(keep, 1.0 / np.maximum(mag, NORMALIZE_EPS), 0.0)
    return VectorField(u * scale, v * scale)


def field_to_display(component: np.ndarray) -> np.ndarray:
    """Map values in [-1, 1] to uint8 with 128 standing for zero."""
    return np.clip(np.rint(128.0 + 127.0 * np.asarray(component)), 0, 255).astype(np.uint8)
