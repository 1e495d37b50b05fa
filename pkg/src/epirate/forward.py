"""Forward solver for the coupled nonlinear SIR reaction-diffusion system.

The three populations obey

    d/dt u_S - Lap u_S + div(u_S q_S) + beta(x) u_S u_I            = 0
    d/dt u_I - Lap u_I + div(u_I q_I) - beta(x) u_S u_I + gamma u_I = 0
    d/dt u_R - Lap u_R + div(u_R q_R) - gamma(x) u_I               = 0

on the square with prescribed initial fields and outward-flux (Neumann)
boundary data.  Time stepping is semi-implicit: diffusion backward Euler
(ghost-value elimination builds the flux data into a symmetric
positive-definite 5-point system solved by conjugate gradients), transport
and reactions explicit from the current step.  The stepper runs on a time
grid finer than the measurement grid and the trajectory exposes a subsampled
view, so synthetic boundary measurements are not produced by the same
discrete operator that the inversion later inverts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import calculus
from .grids import SpatialGrid, TemporalGrid

COMPONENTS = ("S", "I", "R")


class FloorViolated(ValueError):
    """Initial susceptible/infected fields dip below the positivity floor."""


class LinearSolveFailure(RuntimeError):
    """Implicit diffusion solve did not converge."""


class BlowUp(RuntimeError):
    """A population field exceeded the configured magnitude cap."""


class UnstableStep(ValueError):
    """Explicit transport terms violate the CFL-type bound for this step."""


NeumannData = None | np.ndarray | Callable[[float], np.ndarray]
SourceData = None | Callable[[float], np.ndarray]


@dataclass(frozen=True)
class SirProblem:
    """Known problem data; true rates are present only in synthesis mode.

    Initial fields are (n, n); velocity fields are (2, n, n); the optional
    ``neumann`` entry is a (3, 4, n) per-edge outward-flux array (or a
    callable of time returning one, or None for zero flux).  ``sources`` is
    an optional callable of time returning (3, n, n) volumetric sources,
    used by manufactured-solution studies.
    """

    f_s: np.ndarray
    f_i: np.ndarray
    f_r: np.ndarray
    q_s: np.ndarray
    q_i: np.ndarray
    q_r: np.ndarray
    beta_true: np.ndarray | None = None
    gamma_true: np.ndarray | None = None
    c_floor: float = 0.5
    neumann: NeumannData = None
    sources: SourceData = None

    def __post_init__(self):
        if self.c_floor <= 0:
            raise FloorViolated("positivity floor must be positive")
        for name in ("f_s", "f_i"):
            f = getattr(self, name)
            if np.min(np.abs(f)) < self.c_floor:
                raise FloorViolated(
                    f"|{name}| dips to {np.min(np.abs(f)):.4g}, "
                    f"below the floor {self.c_floor}")
        for name in ("f_s", "f_i", "f_r", "q_s", "q_i", "q_r"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite entries")

    def initial_state(self) -> np.ndarray:
        return np.stack([self.f_s, self.f_i, self.f_r])

    def velocities(self) -> np.ndarray:
        return np.stack([self.q_s, self.q_i, self.q_r])

    def neumann_at(self, t: float, num_nodes: int) -> np.ndarray:
        if self.neumann is None:
            return np.zeros((3, 4, num_nodes))
        if callable(self.neumann):
            return np.asarray(self.neumann(t), dtype=float)
        return np.asarray(self.neumann, dtype=float)

    def sources_at(self, t: float) -> np.ndarray | None:
        if self.sources is None:
            return None
        return np.asarray(self.sources(t), dtype=float)


def neumann_1d_laplacian(n: int, spacing: float) -> sp.csr_matrix:
    """1D second-difference matrix with zero-flux ghost elimination built in.

    Boundary rows read (-2, 2)/dx^2; the inhomogeneous flux contribution is a
    separate right-hand-side vector (see boundary_flux_rhs).
    """
    main = np.full(n, -2.0)
    off = np.ones(n - 1)
    m = sp.diags([off, main, off], (-1, 0, 1), format="lil")
    m[0, 1] = 2.0
    m[n - 1, n - 2] = 2.0
    return (m / spacing**2).tocsr()


def neumann_laplacian_2d(sgrid: SpatialGrid) -> sp.csr_matrix:
    n = sgrid.num_nodes
    l1 = neumann_1d_laplacian(n, sgrid.spacing)
    eye = sp.identity(n, format="csr")
    return (sp.kron(l1, eye) + sp.kron(eye, l1)).tocsr()


def boundary_flux_rhs(g_edges: np.ndarray, sgrid: SpatialGrid) -> np.ndarray:
    """Ghost-elimination source for prescribed outward flux, shape (n, n).

    g_edges is (4, n) in calculus.EDGES order.  Corners accumulate the
    contributions of both incident edges.
    """
    n, dx = sgrid.num_nodes, sgrid.spacing
    rhs = np.zeros((n, n))
    rhs[0, :] += 2.0 * g_edges[0] / dx
    rhs[-1, :] += 2.0 * g_edges[1] / dx
    rhs[:, 0] += 2.0 * g_edges[2] / dx
    rhs[:, -1] += 2.0 * g_edges[3] / dx
    return rhs


def boundary_integral(edge_values: np.ndarray, sgrid: SpatialGrid) -> float:
    """Trapezoidal integral over the boundary of per-edge values (4, n)."""
    w = np.ones(sgrid.num_nodes)
    w[0] = w[-1] = 0.5
    return float(np.sum(edge_values * w) * sgrid.spacing)


def stability_limit(problem: SirProblem, sgrid: SpatialGrid,
                    cfl: float = 0.5) -> float:
    """Largest explicit-transport-stable step: cfl * dx / max |q|."""
    qmax = float(np.max(np.abs(problem.velocities())))
    if qmax == 0.0:
        return np.inf
    return cfl * sgrid.spacing / qmax


class SemiImplicitStepper:
    """One assembled backward-Euler diffusion operator, reused every step."""

    def __init__(self, problem: SirProblem, sgrid: SpatialGrid, dt: float,
                 rtol: float = 1e-10, magnitude_cap: float = 1e6):
        if dt <= 0:
            raise ValueError("dt must be positive")
        if dt > stability_limit(problem, sgrid):
            raise UnstableStep(
                f"dt={dt} exceeds the transport stability limit "
                f"{stability_limit(problem, sgrid):.4g}")
        self.problem = problem
        self.sgrid = sgrid
        self.dt = dt
        self.rtol = rtol
        self.magnitude_cap = magnitude_cap
        n = sgrid.num_nodes
        lap = neumann_laplacian_2d(sgrid)
        tw = np.ones(n)
        tw[0] = tw[-1] = 0.5
        w = np.outer(tw, tw).ravel()
        # weighting by the trapezoid diagonal symmetrizes the ghost rows
        self._weights = w
        m = sp.diags(w)
        self._matrix = (m @ (sp.identity(n * n) - dt * lap)).tocsr()
        self._precond = sp.diags(1.0 / self._matrix.diagonal())
        self._q = problem.velocities()

    def _implicit_solve(self, rhs: np.ndarray, guess: np.ndarray) -> np.ndarray:
        b = self._weights * rhs.ravel()
        x, info = spla.cg(self._matrix, b, x0=guess.ravel(),
                          rtol=self.rtol, atol=0.0, M=self._precond)
        if info != 0:
            raise LinearSolveFailure(f"conjugate gradients returned info={info}")
        return x.reshape(rhs.shape)

    def reaction(self, state: np.ndarray) -> np.ndarray:
        """Right-hand-side reaction terms (moved to the right of d/dt)."""
        beta, gamma = self.problem.beta_true, self.problem.gamma_true
        if beta is None or gamma is None:
            raise ValueError("stepping requires true rate fields on the problem")
        u_s, u_i, _ = state
        infect = beta * u_s * u_i
        recover = gamma * u_i
        return np.stack([-infect, infect - recover, recover])

    def step(self, state: np.ndarray, t_old: float) -> np.ndarray:
        """Advance (3, n, n) populations from t_old to t_old + dt."""
        dx = self.sgrid.spacing
        n = self.sgrid.num_nodes
        transport = np.stack([
            calculus.divergence(state[c] * self._q[c, 0],
                                state[c] * self._q[c, 1], dx)
            for c in range(3)
        ])
        explicit = self.reaction(state) - transport
        src = self.problem.sources_at(t_old)
        if src is not None:
            explicit = explicit + src
        g = self.problem.neumann_at(t_old + self.dt, n)
        new = np.empty_like(state)
        for c in range(3):
            rhs = state[c] + self.dt * (
                explicit[c] + boundary_flux_rhs(g[c], self.sgrid))
            new[c] = self._implicit_solve(rhs, state[c])
        if np.max(np.abs(new)) > self.magnitude_cap:
            raise BlowUp(
                f"population magnitude exceeded the cap {self.magnitude_cap}")
        return new


def sir_step(state: np.ndarray, problem: SirProblem, sgrid: SpatialGrid,
             dt: float, t: float = 0.0, **kwargs) -> np.ndarray:
    """Single semi-implicit step (assembles the operator; see the stepper)."""
    return SemiImplicitStepper(problem, sgrid, dt, **kwargs).step(state, t)


@dataclass(frozen=True)
class Trajectory:
    """Forward solution with fine time resolution and a measurement view."""

    measured: np.ndarray            # (3, k+1, n, n) on the measurement grid
    tgrid: TemporalGrid             # measurement grid
    sgrid: SpatialGrid
    fine: np.ndarray | None         # (3, num_fine+1, n, n) or None
    fine_step: float
    refine: int
    mass_total: np.ndarray          # (num_fine+1,) trapezoid mass of S+I+R
    flux_total: np.ndarray          # (num_fine,) physical boundary flux rate

    def rate_of_change_on_measurement_grid(self) -> np.ndarray:
        """Time derivative of the populations at measurement nodes.

        Uses centered differences on the fine grid (one-sided at the ends),
        second-order in the fine step; serves as the reference unknown for
        closed-loop error reporting.
        """
        if self.fine is None:
            raise ValueError("fine trajectory was not stored")
        u, r, dt = self.fine, self.refine, self.fine_step
        idx = np.arange(self.tgrid.num_steps + 1) * r
        last = u.shape[1] - 1
        out = np.empty((3, len(idx)) + u.shape[2:])
        for m, s in enumerate(idx):
            if s == 0:
                out[:, m] = (-3.0 * u[:, 0] + 4.0 * u[:, 1] - u[:, 2]) / (2 * dt)
            elif s == last:
                out[:, m] = (3.0 * u[:, last] - 4.0 * u[:, last - 1]
                             + u[:, last - 2]) / (2 * dt)
            else:
                out[:, m] = (u[:, s + 1] - u[:, s - 1]) / (2 * dt)
        return out


def solve_forward(problem: SirProblem, fine_tgrid: TemporalGrid,
                  sgrid: SpatialGrid, measure_tgrid: TemporalGrid | None = None,
                  keep_fine: bool = True, rtol: float = 1e-10,
                  magnitude_cap: float = 1e6) -> Trajectory:
    """March the system over the fine grid; subsample to the measurement grid.

    The initial slice of both views equals the initial fields bit for bit.
    """
    if measure_tgrid is None:
        measure_tgrid = fine_tgrid
    if abs(measure_tgrid.final_time - fine_tgrid.final_time) > 1e-14:
        raise ValueError("fine and measurement grids must share the horizon")
    refine, rem = divmod(fine_tgrid.num_steps, measure_tgrid.num_steps)
    if rem != 0:
        raise ValueError("fine step count must be a multiple of the "
                         "measurement step count")
    stepper = SemiImplicitStepper(problem, sgrid, fine_tgrid.step,
                                  rtol=rtol, magnitude_cap=magnitude_cap)
    num_fine = fine_tgrid.num_steps
    n = sgrid.num_nodes
    quad = sgrid.trapezoid_weights()

    state = problem.initial_state()
    fine = np.empty((3, num_fine + 1, n, n)) if keep_fine else None
    measured = np.empty((3, measure_tgrid.num_steps + 1, n, n))
    mass_total = np.empty(num_fine + 1)
    flux_total = np.empty(num_fine)
    if keep_fine:
        fine[:, 0] = state
    measured[:, 0] = state
    mass_total[0] = float(np.sum(state.sum(axis=0) * quad))

    for s in range(1, num_fine + 1):
        t_old = fine_tgrid.nodes[s - 1]
        # physical flux rate: prescribed diffusive flux at the new level plus
        # the advective outflow -(u q . l) at the explicit (old) level
        g = problem.neumann_at(fine_tgrid.nodes[s], n)
        flux = sum(boundary_integral(g[c], sgrid) for c in range(3))
        q = problem.velocities()
        for c in range(3):
            qn = _outward_normal_component(state[c] * q[c, 0],
                                           state[c] * q[c, 1])
            flux -= boundary_integral(qn, sgrid)
        src = problem.sources_at(t_old)
        if src is not None:
            flux += float(np.sum(src.sum(axis=0) * quad))
        state = stepper.step(state, t_old)
        if keep_fine:
            fine[:, s] = state
        if s % refine == 0:
            measured[:, s // refine] = state
        mass_total[s] = float(np.sum(state.sum(axis=0) * quad))
        flux_total[s - 1] = flux

    return Trajectory(measured=measured, tgrid=measure_tgrid, sgrid=sgrid,
                      fine=fine, fine_step=fine_tgrid.step, refine=refine,
                      mass_total=mass_total, flux_total=flux_total)


def _outward_normal_component(w1: np.ndarray, w2: np.ndarray) -> np.ndarray:
    """(w . l) on the boundary, per edge (4, n): l is the outward normal."""
    return np.stack([-w1[0, :], w1[-1, :], -w2[:, 0], w2[:, -1]])


def mass_balance_residual(traj: Trajectory) -> np.ndarray:
    """Per-measurement-step mass change minus the time-integrated flux.

    Entry s >= 1 compares the total-mass increment over (t_{s-1}, t_s] with
    the accumulated physical boundary flux (prescribed diffusive flux plus
    advective outflow); entry 0 is zero.  Reactions cancel in the total mass
    by construction of the system.
    """
    r = traj.refine
    dt = traj.fine_step
    k = traj.tgrid.num_steps
    out = np.zeros(k + 1)
    for s in range(1, k + 1):
        dm = traj.mass_total[s * r] - traj.mass_total[(s - 1) * r]
        fl = dt * float(np.sum(traj.flux_total[(s - 1) * r:s * r]))
        out[s] = dm - fl
    return out
