"""Lateral boundary data for the inversion: extraction, noise, extension.

The inversion works on the time rate of change of the three populations, so
the measured Dirichlet/Neumann traces of the trajectory are differentiated
in time with the same second-order stencils used everywhere else.  The
extension routine turns the pair of boundary traces into an interior field
that reproduces the Dirichlet trace exactly and the outward-derivative trace
to second order in the mesh width: each edge contributes its first-order
normal Taylor model under a C^2 cutoff, and where two edges' cutoffs overlap
near a corner the doubly counted part is removed with a corner model that
includes a twist term estimated from the flux data (a boolean-sum, or
transfinite, correction; plain inverse-distance averaging of the two edge
models caps the flux-trace accuracy at first order near corners).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import calculus
from .forward import Trajectory
from .grids import SpatialGrid, TemporalGrid


@dataclass(frozen=True)
class CauchyData:
    """Boundary traces of the rate-of-change unknown.

    Both arrays have shape (3, k+1, 4, n): component, time node, edge in
    calculus.EDGES order, position along the edge.  ``dirichlet`` holds the
    values, ``neumann`` the outward normal derivatives.
    """

    dirichlet: np.ndarray
    neumann: np.ndarray

    def __post_init__(self):
        if self.dirichlet.shape != self.neumann.shape:
            raise ValueError("trace arrays must share a shape")
        if self.dirichlet.ndim != 4 or self.dirichlet.shape[2] != 4:
            raise ValueError("trace arrays must be (components, times, 4, n)")
        if not (np.all(np.isfinite(self.dirichlet))
                and np.all(np.isfinite(self.neumann))):
            raise ValueError("trace arrays contain non-finite entries")


def extract_cauchy_data(traj: Trajectory) -> CauchyData:
    """Boundary traces of the trajectory, differentiated in time.

    Population traces are read from the measurement-grid view (values
    directly, outward derivatives by the one-sided stencil), then the
    second-order time derivative produces the traces of the rate of change.
    """
    dt_mat = calculus.time_derivative_matrix(traj.tgrid.num_steps,
                                             traj.tgrid.step)
    p = calculus.dirichlet_trace(traj.measured)          # (3, k+1, 4, n)
    g = calculus.neumann_trace(traj.measured, traj.sgrid.spacing)
    q = np.stack([calculus.apply_along_time(dt_mat, p[c]) for c in range(3)])
    z = np.stack([calculus.apply_along_time(dt_mat, g[c]) for c in range(3)])
    return CauchyData(dirichlet=q, neumann=z)


def add_noise(data: CauchyData, level: float, seed: int) -> CauchyData:
    """Additive uniform noise, relative to each component's own amplitude.

    Every entry e becomes e + level * A * xi with xi uniform on [-1, 1] and A
    the max absolute value of that component's clean trace (measured
    separately for the Dirichlet and Neumann arrays).  level = 0 returns the
    data unchanged bit for bit.
    """
    if level < 0:
        raise ValueError("noise level must be nonnegative")
    if level == 0.0:
        return CauchyData(dirichlet=data.dirichlet.copy(),
                          neumann=data.neumann.copy())
    rng = np.random.default_rng(seed)
    out = []
    for arr in (data.dirichlet, data.neumann):
        noisy = arr.copy()
        for c in range(arr.shape[0]):
            amp = float(np.max(np.abs(arr[c])))
            noisy[c] += level * amp * rng.uniform(-1.0, 1.0, size=arr[c].shape)
        out.append(noisy)
    return CauchyData(dirichlet=out[0], neumann=out[1])


# ---------------------------------------------------------------------------
# extension of the boundary data into the square
# ---------------------------------------------------------------------------

def _cutoff(d: np.ndarray, inner: float, outer: float) -> np.ndarray:
    """C^2 cutoff: 1 for d <= inner, 0 for d >= outer, quintic in between."""
    t = np.clip((d - inner) / (outer - inner), 0.0, 1.0)
    s = t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
    return 1.0 - s


def _end_derivative(edge: np.ndarray, spacing: float, at_start: bool) -> float:
    """One-sided derivative of an along-edge array at one of its ends."""
    if at_start:
        return float((-3.0 * edge[0] + 4.0 * edge[1] - edge[2]) / (2 * spacing))
    return float((3.0 * edge[-1] - 4.0 * edge[-2] + edge[-3]) / (2 * spacing))


def _extend_slice(q: np.ndarray, z: np.ndarray, sgrid: SpatialGrid) -> np.ndarray:
    """Extend one component at one time node; q, z are (4, n) edge arrays."""
    n, dx = sgrid.num_nodes, sgrid.spacing
    width = sgrid.hi - sgrid.lo
    inner, outer = width / 8.0, width / 4.0
    i = np.arange(n) * dx
    d_left = np.broadcast_to(i[:, None], (n, n))
    d_right = np.broadcast_to(i[::-1][:, None], (n, n))
    d_bottom = np.broadcast_to(i[None, :], (n, n))
    d_top = np.broadcast_to(i[::-1][None, :], (n, n))
    dists = (d_left, d_right, d_bottom, d_top)
    chi = [_cutoff(d, inner, outer) for d in dists]

    # first-order normal Taylor model of each edge: value minus distance
    # times the outward derivative (moving inward decreases along the normal)
    vals = [
        q[0][None, :] - d_left * z[0][None, :],
        q[1][None, :] - d_right * z[1][None, :],
        q[2][:, None] - d_bottom * z[2][:, None],
        q[3][:, None] - d_top * z[3][:, None],
    ]
    w = sum(c * v for c, v in zip(chi, vals))

    # corners: (vertical edge, horizontal edge, end flag, twist sign)
    corners = (
        (0, 2, True, 1.0),    # left-bottom
        (0, 3, False, -1.0),  # left-top
        (1, 2, True, -1.0),   # right-bottom
        (1, 3, False, 1.0),   # right-top
    )
    sign_v = (-1.0, 1.0, -1.0, 1.0)  # d(edge trace)/d(coordinate) -> twist
    for ev, eh, at_start, sigma in corners:
        end_v = 0 if at_start else n - 1
        end_h = 0 if (ev == 0) else n - 1
        q_c = 0.5 * (q[ev][end_v] + q[eh][end_h])
        z_v = z[ev][end_v]
        z_h = z[eh][end_h]
        twist = 0.5 * (
            sign_v[eh] * _end_derivative(z[eh], dx, at_start=(ev == 0))
            + sign_v[ev] * _end_derivative(z[ev], dx, at_start=at_start))
        xi = dists[ev]
        eta = dists[eh]
        val_c = q_c - xi * z_v - eta * z_h + sigma * xi * eta * twist
        w -= chi[ev] * chi[eh] * val_c
    return w


def extend_boundary_data(data: CauchyData, tgrid: TemporalGrid,
                         sgrid: SpatialGrid) -> np.ndarray:
    """Interior extension of the boundary traces, shape (3, k+1, n, n).

    Linear in the traces.  Reproduces the Dirichlet trace exactly (for
    corner-consistent data) and the outward-derivative trace to second order
    in the mesh width, provided the mesh has at least 17 nodes per axis so
    the cutoff plateau covers the trace stencil.
    """
    k = tgrid.num_steps
    n = sgrid.num_nodes
    if data.dirichlet.shape != (3, k + 1, 4, n):
        raise ValueError(f"trace shape {data.dirichlet.shape} does not match "
                         f"grids (3, {k + 1}, 4, {n})")
    out = np.empty((3, k + 1, n, n))
    for c in range(3):
        for s in range(k + 1):
            out[c, s] = _extend_slice(data.dirichlet[c, s], data.neumann[c, s],
                                      sgrid)
    return out


def zero_interior(state: np.ndarray, layers: int = 3) -> np.ndarray:
    """Copy of a (..., n, n) field with everything inside ``layers`` zeroed."""
    out = state.copy()
    out[..., layers:-layers, layers:-layers] = 0.0
    return out
