"""Second-order finite-difference calculus on uniform grids.

Time direction: a three-point derivative that is one-sided at the first and
last nodes and centered in between, so every node (edges included) carries a
second-order accurate derivative, plus a trapezoidal cumulative integral that
vanishes at the first node.  Space direction: the usual 5-point Laplacian on
interior nodes and componentwise first/second derivatives that fall back to
second-order one-sided stencils on the boundary.

All operators here are exact on polynomials of total degree <= 2; several
tests and the verification harness rely on that.
"""

from __future__ import annotations

import numpy as np

EDGES = ("left", "right", "bottom", "top")


class BoundaryNode(ValueError):
    """A stencil restricted to interior nodes was applied on the boundary."""


# ---------------------------------------------------------------------------
# time stencils
# ---------------------------------------------------------------------------

def time_derivative_matrix(num_steps: int, step: float) -> np.ndarray:
    """Dense (k+1)x(k+1) matrix of the second-order time derivative.

    Row 0 and row k hold the one-sided stencils (-3f_0 + 4f_1 - f_2)/(2h)
    and (3f_k - 4f_{k-1} + f_{k-2})/(2h); interior rows hold the centered
    difference (f_{s+1} - f_{s-1})/(2h).  All rows approximate the forward
    derivative df/dt to second order (a Taylor expansion fixes the sign of
    the first row: the mirrored variant converges to -df/dt).
    """
    if num_steps < 2:
        raise ValueError("need at least 3 time nodes for the edge stencils")
    k = num_steps
    m = np.zeros((k + 1, k + 1))
    m[0, 0:3] = (-3.0, 4.0, -1.0)
    m[k, k - 2:k + 1] = (1.0, -4.0, 3.0)
    for s in range(1, k):
        m[s, s - 1] = -1.0
        m[s, s + 1] = 1.0
    return m / (2.0 * step)


def cumulative_integral_matrix(num_steps: int, step: float) -> np.ndarray:
    """Dense (k+1)x(k+1) matrix of the trapezoidal cumulative integral.

    Row s maps a series f to (h/2) * sum_{j=1..s} (f_{j-1} + f_j); row 0 is
    identically zero.
    """
    k = num_steps
    m = np.zeros((k + 1, k + 1))
    for s in range(1, k + 1):
        m[s, 0] = 0.5
        m[s, s] = 0.5
        m[s, 1:s] = 1.0
    return m * step


def _check_node(series: np.ndarray, s: int) -> None:
    if not 0 <= s < series.shape[0]:
        raise IndexError(f"time node {s} outside 0..{series.shape[0] - 1}")


def time_derivative_at(series: np.ndarray, s: int, step: float) -> float:
    """Second-order time derivative of a nodal series at node s."""
    series = np.asarray(series, dtype=float)
    _check_node(series, s)
    k = series.shape[0] - 1
    if s == 0:
        return (-3.0 * series[0] + 4.0 * series[1] - series[2]) / (2.0 * step)
    if s == k:
        return (3.0 * series[k] - 4.0 * series[k - 1] + series[k - 2]) / (2.0 * step)
    return (series[s + 1] - series[s - 1]) / (2.0 * step)


def cumulative_integral_at(series: np.ndarray, s: int, step: float) -> float:
    """Trapezoidal integral of a nodal series from node 0 up to node s."""
    series = np.asarray(series, dtype=float)
    _check_node(series, s)
    if s == 0:
        return 0.0
    return 0.5 * step * float(np.sum(series[:s] + series[1:s + 1]))


def apply_along_time(matrix: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Apply a (k+1)x(k+1) time operator along axis 0 of a nodal array."""
    return np.tensordot(matrix, values, axes=(1, 0))


# ---------------------------------------------------------------------------
# spatial stencils
# ---------------------------------------------------------------------------

def laplacian_at(u: np.ndarray, i: int, j: int, spacing: float) -> float:
    """5-point Laplacian at an interior node; boundary nodes are rejected."""
    n0, n1 = u.shape
    if i <= 0 or j <= 0 or i >= n0 - 1 or j >= n1 - 1:
        raise BoundaryNode(f"node ({i}, {j}) is not interior to a {n0}x{n1} slice")
    return (u[i - 1, j] + u[i + 1, j] + u[i, j - 1] + u[i, j + 1]
            - 4.0 * u[i, j]) / spacing**2


def laplacian_interior(u: np.ndarray, spacing: float) -> np.ndarray:
    """5-point Laplacian on every interior node of a slice (vectorized).

    Works equally on stacks of slices, i.e. arrays of shape (..., n, n);
    returns shape (..., n - 2, n - 2).
    """
    c = u[..., 1:-1, 1:-1]
    return (u[..., :-2, 1:-1] + u[..., 2:, 1:-1]
            + u[..., 1:-1, :-2] + u[..., 1:-1, 2:] - 4.0 * c) / spacing**2


def scatter_laplacian_interior(r: np.ndarray, spacing: float) -> np.ndarray:
    """Transpose of :func:`laplacian_interior` (scatter back to full slices)."""
    shape = r.shape[:-2] + (r.shape[-2] + 2, r.shape[-1] + 2)
    out = np.zeros(shape)
    out[..., :-2, 1:-1] += r
    out[..., 2:, 1:-1] += r
    out[..., 1:-1, :-2] += r
    out[..., 1:-1, 2:] += r
    out[..., 1:-1, 1:-1] -= 4.0 * r
    return out / spacing**2


def first_derivative(u: np.ndarray, spacing: float, axis: int) -> np.ndarray:
    """First derivative on the full slice along one axis.

    Centered in the interior, second-order one-sided on the two boundary
    lines.  Accepts stacked slices (..., n, n); `axis` counts from the
    trailing two dimensions (0 -> rows/x1, 1 -> columns/x2).
    """
    u = np.moveaxis(u, axis - 2, -1)
    d = np.empty_like(u)
    d[..., 1:-1] = (u[..., 2:] - u[..., :-2]) / (2.0 * spacing)
    d[..., 0] = (-3.0 * u[..., 0] + 4.0 * u[..., 1] - u[..., 2]) / (2.0 * spacing)
    d[..., -1] = (3.0 * u[..., -1] - 4.0 * u[..., -2] + u[..., -3]) / (2.0 * spacing)
    return np.moveaxis(d, -1, axis - 2)


def second_derivative(u: np.ndarray, spacing: float, axis: int) -> np.ndarray:
    """Pure second derivative on the full slice along one axis.

    Three-point centered stencil inside, four-point one-sided stencil
    (2u_0 - 5u_1 + 4u_2 - u_3)/h^2 on the boundary lines; both second order.
    """
    u = np.moveaxis(u, axis - 2, -1)
    d = np.empty_like(u)
    d[..., 1:-1] = (u[..., 2:] - 2.0 * u[..., 1:-1] + u[..., :-2]) / spacing**2
    d[..., 0] = (2.0 * u[..., 0] - 5.0 * u[..., 1] + 4.0 * u[..., 2]
                 - u[..., 3]) / spacing**2
    d[..., -1] = (2.0 * u[..., -1] - 5.0 * u[..., -2] + 4.0 * u[..., -3]
                  - u[..., -4]) / spacing**2
    return np.moveaxis(d, -1, axis - 2)


def mixed_second_derivative(u: np.ndarray, spacing: float) -> np.ndarray:
    """Mixed derivative d^2 u / dx1 dx2 by composing first derivatives."""
    return first_derivative(first_derivative(u, spacing, axis=0), spacing, axis=1)


def gradient_at(u: np.ndarray, i: int, j: int, spacing: float) -> tuple[float, float]:
    """(d/dx1, d/dx2) at a node; one-sided on the boundary."""
    g1 = first_derivative(u, spacing, axis=0)
    g2 = first_derivative(u, spacing, axis=1)
    return float(g1[i, j]), float(g2[i, j])


def divergence_at(w1: np.ndarray, w2: np.ndarray, i: int, j: int,
                  spacing: float) -> float:
    """Divergence of the vector slice (w1, w2) at a node."""
    d1 = first_derivative(w1, spacing, axis=0)
    d2 = first_derivative(w2, spacing, axis=1)
    return float(d1[i, j] + d2[i, j])


def divergence(w1: np.ndarray, w2: np.ndarray, spacing: float) -> np.ndarray:
    """Divergence of a vector slice on the full grid."""
    return first_derivative(w1, spacing, axis=0) + first_derivative(w2, spacing, axis=1)


def centered_diff_interior(u: np.ndarray, spacing: float, axis: int) -> np.ndarray:
    """Centered first derivative restricted to interior nodes.

    Input (..., n, n) -> output (..., n-2, n-2).
    """
    if axis == 0:
        return (u[..., 2:, 1:-1] - u[..., :-2, 1:-1]) / (2.0 * spacing)
    return (u[..., 1:-1, 2:] - u[..., 1:-1, :-2]) / (2.0 * spacing)


def scatter_centered_diff_interior(r: np.ndarray, spacing: float,
                                   axis: int) -> np.ndarray:
    """Transpose of :func:`centered_diff_interior`."""
    shape = r.shape[:-2] + (r.shape[-2] + 2, r.shape[-1] + 2)
    out = np.zeros(shape)
    if axis == 0:
        out[..., 2:, 1:-1] += r
        out[..., :-2, 1:-1] -= r
    else:
        out[..., 1:-1, 2:] += r
        out[..., 1:-1, :-2] -= r
    return out / (2.0 * spacing)


# ---------------------------------------------------------------------------
# boundary traces
# ---------------------------------------------------------------------------

def dirichlet_trace(u: np.ndarray) -> np.ndarray:
    """Boundary values of a slice, per edge.

    Returns shape (..., 4, n) ordered per EDGES: left (x1 low), right
    (x1 high), bottom (x2 low), top (x2 high).  Corner nodes appear on both
    incident edges.
    """
    return np.stack(
        [u[..., 0, :], u[..., -1, :], u[..., :, 0], u[..., :, -1]], axis=-2)


def neumann_trace(u: np.ndarray, spacing: float) -> np.ndarray:
    """Outward normal derivative on the boundary, per edge.

    Second-order one-sided stencil (3u_0 - 4u_1 + u_2)/(2 dx) along the
    outward normal; same layout as :func:`dirichlet_trace`.
    """
    f = 1.0 / (2.0 * spacing)
    left = (3.0 * u[..., 0, :] - 4.0 * u[..., 1, :] + u[..., 2, :]) * f
    right = (3.0 * u[..., -1, :] - 4.0 * u[..., -2, :] + u[..., -3, :]) * f
    bottom = (3.0 * u[..., :, 0] - 4.0 * u[..., :, 1] + u[..., :, 2]) * f
    top = (3.0 * u[..., :, -1] - 4.0 * u[..., :, -2] + u[..., :, -3]) * f
    return np.stack([left, right, bottom, top], axis=-2)
