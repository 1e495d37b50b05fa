"""Grids for the semi-discrete space-time cylinder and the norms on it.

A field lives on a uniform time grid (whose step is bounded below by a hard
floor, reflecting that measured data never come on arbitrarily fine time
grids) times a uniform square spatial mesh.  The norm of a field is the
root-sum-of-squares over time slices of spatial Sobolev norms of order 0, 1
or 2, with spatial derivatives taken by the same stencils the rest of the
package uses and spatial integrals by the composite trapezoidal rule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import calculus


class GridError(ValueError):
    """Invalid grid or field construction."""


class StepTooSmall(GridError):
    """Requested time step falls below the configured floor."""


class TooFewSubintervals(GridError):
    """Time grids need at least 3 subintervals (edge stencils span 3 nodes)."""


class BadBounds(GridError):
    """Spatial bounds must satisfy 0 < lo < hi."""


class TooCoarse(GridError):
    """Spatial mesh too coarse for second-order one-sided boundary stencils."""


class BadNormOrder(GridError):
    """Sobolev order must be 0, 1 or 2."""


@dataclass(frozen=True)
class TemporalGrid:
    """Uniform partition of [0, final_time] into num_steps subintervals."""

    final_time: float
    num_steps: int
    step: float
    min_step: float
    nodes: np.ndarray

    def __eq__(self, other) -> bool:
        return (isinstance(other, TemporalGrid)
                and self.final_time == other.final_time
                and self.num_steps == other.num_steps
                and self.min_step == other.min_step)


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform num_nodes x num_nodes mesh on the square [lo, hi]^2."""

    lo: float
    hi: float
    num_nodes: int
    spacing: float

    @property
    def coords(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.num_nodes)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Coordinate arrays (X1, X2), 'ij' indexed: X1 varies along axis 0."""
        c = self.coords
        return np.meshgrid(c, c, indexing="ij")

    def trapezoid_weights(self) -> np.ndarray:
        """Composite trapezoidal quadrature weights over the full mesh."""
        w = np.ones(self.num_nodes)
        w[0] = w[-1] = 0.5
        return np.outer(w, w) * self.spacing**2

    def interior_trapezoid_weights(self) -> np.ndarray:
        """Trapezoidal weights on the interior subgrid (boundary ring removed)."""
        w = np.ones(self.num_nodes - 2)
        w[0] = w[-1] = 0.5
        return np.outer(w, w) * self.spacing**2


def build_temporal_grid(final_time: float, num_steps: int,
                        min_step: float) -> TemporalGrid:
    """Uniform time grid with step final_time / num_steps, floor-checked."""
    if final_time <= 0:
        raise GridError("final_time must be positive")
    if min_step <= 0:
        raise GridError("min_step must be positive")
    if num_steps < 3:
        raise TooFewSubintervals(f"need at least 3 subintervals, got {num_steps}")
    step = final_time / num_steps
    if step < min_step:
        raise StepTooSmall(f"step {step} below floor {min_step}")
    nodes = np.linspace(0.0, final_time, num_steps + 1)
    return TemporalGrid(final_time, num_steps, step, min_step, nodes)


def build_spatial_grid(lo: float, hi: float, num_nodes: int) -> SpatialGrid:
    """Uniform square mesh on [lo, hi]^2 with num_nodes nodes per axis."""
    if lo <= 0 or hi <= lo:
        raise BadBounds(f"require 0 < lo < hi, got lo={lo}, hi={hi}")
    if num_nodes < 5:
        raise TooCoarse(f"need at least 5 nodes per axis, got {num_nodes}")
    spacing = (hi - lo) / (num_nodes - 1)
    return SpatialGrid(lo, hi, num_nodes, spacing)


@dataclass(frozen=True)
class SemiDiscreteField:
    """Scalar field stored per time node: values[s, i, j] at (x1_i, x2_j, t_s)."""

    values: np.ndarray
    tgrid: TemporalGrid
    sgrid: SpatialGrid

    def __post_init__(self):
        k, n = self.tgrid.num_steps, self.sgrid.num_nodes
        if self.values.shape != (k + 1, n, n):
            raise GridError(
                f"field shape {self.values.shape} does not match grids "
                f"({k + 1}, {n}, {n})")
        if not np.all(np.isfinite(self.values)):
            raise GridError("field contains non-finite entries")


def slice_sobolev_sq(u: np.ndarray, sgrid: SpatialGrid, order: int) -> np.ndarray:
    """Squared spatial H^order norm of each slice of a (..., n, n) array.

    order 0: integral of u^2; order 1 adds |grad u|^2; order 2 adds all four
    second derivatives (the mixed one counted for both index orders).
    Integrals use the trapezoidal rule on the full mesh.
    """
    if order not in (0, 1, 2):
        raise BadNormOrder(f"order must be 0, 1 or 2, got {order}")
    w = sgrid.trapezoid_weights()
    dx = sgrid.spacing
    dens = u * u
    if order >= 1:
        g1 = calculus.first_derivative(u, dx, axis=0)
        g2 = calculus.first_derivative(u, dx, axis=1)
        dens = dens + g1 * g1 + g2 * g2
    if order == 2:
        h11 = calculus.second_derivative(u, dx, axis=0)
        h22 = calculus.second_derivative(u, dx, axis=1)
        h12 = calculus.mixed_second_derivative(u, dx)
        dens = dens + h11 * h11 + h22 * h22 + 2.0 * h12 * h12
    return np.sum(dens * w, axis=(-2, -1))


def sobolev_norm(field: SemiDiscreteField | np.ndarray, order: int,
                 sgrid: SpatialGrid | None = None) -> float:
    """Semi-discrete norm: sqrt of the sum over time slices of H^order norms.

    Accepts either a SemiDiscreteField or a raw (k+1, n, n) array plus its
    spatial grid.
    """
    if isinstance(field, SemiDiscreteField):
        values, sgrid = field.values, field.sgrid
    else:
        if sgrid is None:
            raise GridError("raw arrays need an explicit spatial grid")
        values = field
    return float(np.sqrt(np.sum(slice_sobolev_sq(values, sgrid, order))))
