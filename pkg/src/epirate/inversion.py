"""Weighted least-squares inversion for the spatial infection/recovery rates.

The unknown is the rate of change of the three populations, stored as a
(3, k+1, n, n) array V = (v1, v2, v3) on the measurement grid.  Writing the
rates via the initial-time identities (value at time zero recovered from any
node through the cumulative integral of the time derivative) and
substituting them back into the time-differentiated system leaves three
residual operators in V alone:

    A1 = Dv1 - Lap v1 + div(v1 q_S) + Fb(v1) * P(V)
    A2 = Dv2 - Lap v2 + div(v2 q_I) - Fb(v1) * P(V) + Fg(v3) * v2
    A3 = Dv3 - Lap v3 + div(v3 q_R) - Fg(v3) * v2

with D the second-order time stencil, the infection-rate factor
Fb(v1) = (f_S f_I)^-1 [ -v1 + C(Dv1) + Lap f_S - div(f_S q_S) ], the
recovery-rate factor Fg(v3) = f_I^-1 [ v3 - C(Dv3) - Lap f_R +
div(f_R q_R) ], C the cumulative time integral, and the bilinear term
P(V) = v1 (C(v2) + f_I) + v2 (C(v1) + f_S).  The functional is the
weight-multiplied sum of squared residuals over interior nodes and all time
nodes, the weight being exp(2 lam x1^2).

The gradient is assembled from the exact transposes of the implemented
discrete operators and then projected to vanish on the three outermost node
layers, which pins both the value trace and the three-point outward
derivative trace of every iterate to those of the starting point.  Descent
is plain gradient descent with backtracking; an optional smoothing
preconditioner (one screened-diffusion solve per slice through the inverse
square root of the weight) tames the fourth-order stiffness of the normal
operator on finer meshes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import calculus
from .forward import FloorViolated, SirProblem
from .grids import SpatialGrid, TemporalGrid, slice_sobolev_sq

_2DX = calculus.centered_diff_interior
_2DX_T = calculus.scatter_centered_diff_interior


class Diverged(RuntimeError):
    """Backtracking reduced the step below its floor without improving."""


class BallExceededWarning(UserWarning):
    """An iterate left the configured admissible ball (iteration continues)."""


def check_state(state: np.ndarray, tgrid: TemporalGrid,
                sgrid: SpatialGrid) -> np.ndarray:
    state = np.asarray(state, dtype=float)
    want = (3, tgrid.num_steps + 1, sgrid.num_nodes, sgrid.num_nodes)
    if state.shape != want:
        raise ValueError(f"state shape {state.shape}, expected {want}")
    if not np.all(np.isfinite(state)):
        raise ValueError("state contains non-finite entries")
    return state


def state_norm(state: np.ndarray, sgrid: SpatialGrid, order: int = 2) -> float:
    """Semi-discrete Sobolev norm of a 3-component state."""
    return float(np.sqrt(sum(
        np.sum(slice_sobolev_sq(state[c], sgrid, order)) for c in range(3))))


def free_mask(sgrid: SpatialGrid, layers: int = 3) -> np.ndarray:
    """Nodes the descent may move: everything at least ``layers`` inside."""
    n = sgrid.num_nodes
    m = np.zeros((n, n), dtype=bool)
    m[layers:n - layers, layers:n - layers] = True
    return m


class InversionOperator:
    """Residuals, functional, exact-adjoint gradient for one problem/weight."""

    def __init__(self, problem: SirProblem, tgrid: TemporalGrid,
                 sgrid: SpatialGrid, lam: float, pinned_layers: int = 3):
        if lam < 0:
            raise ValueError("lam must be nonnegative")
        if np.min(np.abs(problem.f_s)) < problem.c_floor \
                or np.min(np.abs(problem.f_i)) < problem.c_floor:
            raise FloorViolated("initial fields dip below the positivity floor")
        self.problem = problem
        self.tgrid = tgrid
        self.sgrid = sgrid
        self.lam = float(lam)
        self.pinned_layers = pinned_layers

        k, h = tgrid.num_steps, tgrid.step
        dx = sgrid.spacing
        self.dt_mat = calculus.time_derivative_matrix(k, h)
        self.cum_mat = calculus.cumulative_integral_matrix(k, h)
        self.cumdt_mat = self.cum_mat @ self.dt_mat

        inner = (slice(1, -1), slice(1, -1))
        f_s, f_i, f_r = problem.f_s, problem.f_i, problem.f_r
        lap = lambda f: (calculus.second_derivative(f, dx, axis=0)
                         + calculus.second_derivative(f, dx, axis=1))
        div = calculus.divergence
        self.source_s = lap(f_s) - div(f_s * problem.q_s[0],
                                       f_s * problem.q_s[1], dx)
        self.source_r = -lap(f_r) + div(f_r * problem.q_r[0],
                                        f_r * problem.q_r[1], dx)
        self.inv_fsfi = 1.0 / (f_s * f_i)
        self.inv_fi = 1.0 / f_i
        self._i_inv_fsfi = self.inv_fsfi[inner]
        self._i_inv_fi = self.inv_fi[inner]
        self._i_source_s = self.source_s[inner]
        self._i_source_r = self.source_r[inner]
        self._i_f_s = f_s[inner]
        self._i_f_i = f_i[inner]
        self._q = problem.velocities()

        x1, _ = sgrid.mesh()
        self.weight = np.exp(2.0 * self.lam * x1 * x1)
        self.quad_weight = (sgrid.interior_trapezoid_weights()
                            * self.weight[inner])
        self.mask = free_mask(sgrid, pinned_layers)

    # -- building blocks ---------------------------------------------------

    def _tderiv(self, a: np.ndarray) -> np.ndarray:
        return calculus.apply_along_time(self.dt_mat, a)

    def _cum(self, a: np.ndarray) -> np.ndarray:
        return calculus.apply_along_time(self.cum_mat, a)

    def _cumdt(self, a: np.ndarray) -> np.ndarray:
        return calculus.apply_along_time(self.cumdt_mat, a)

    def _elliptic(self, v: np.ndarray, q: np.ndarray) -> np.ndarray:
        """(Dv - Lap v + div(v q)) on interior nodes; v is (k+1, n, n)."""
        dx = self.sgrid.spacing
        out = self._tderiv(v)[:, 1:-1, 1:-1]
        out -= calculus.laplacian_interior(v, dx)
        out += _2DX(v * q[0], dx, 0) + _2DX(v * q[1], dx, 1)
        return out

    def _elliptic_adjoint(self, r: np.ndarray, q: np.ndarray) -> np.ndarray:
        """Exact transpose of :meth:`_elliptic`; r is (k+1, n-2, n-2)."""
        dx = self.sgrid.spacing
        out = np.zeros((r.shape[0],) + (self.sgrid.num_nodes,) * 2)
        out[:, 1:-1, 1:-1] = calculus.apply_along_time(self.dt_mat.T, r)
        out -= calculus.scatter_laplacian_interior(r, dx)
        out += q[0] * _2DX_T(r, dx, 0) + q[1] * _2DX_T(r, dx, 1)
        return out

    def _frame(self, state: np.ndarray) -> dict:
        """State-dependent interior fields shared by residuals and adjoints."""
        v1, v2, v3 = state
        inner = (slice(None), slice(1, -1), slice(1, -1))
        i_v1, i_v2 = v1[inner], v2[inner]
        rate_b = self._i_inv_fsfi * (-i_v1 + self._cumdt(v1)[inner]
                                     + self._i_source_s)
        rate_g = self._i_inv_fi * (v3[inner] - self._cumdt(v3)[inner]
                                   + self._i_source_r)
        pop_s = self._cum(v1)[inner] + self._i_f_s
        pop_i = self._cum(v2)[inner] + self._i_f_i
        bilinear = i_v1 * pop_i + i_v2 * pop_s
        return {"v1": i_v1, "v2": i_v2, "rate_b": rate_b, "rate_g": rate_g,
                "pop_s": pop_s, "pop_i": pop_i, "bilinear": bilinear}

    # -- public surface ----------------------------------------------------

    def residuals(self, state: np.ndarray, frame: dict | None = None) -> np.ndarray:
        """All three residual operators on interior nodes: (3, k+1, n-2, n-2)."""
        fr = frame or self._frame(state)
        a1 = self._elliptic(state[0], self._q[0]) + fr["rate_b"] * fr["bilinear"]
        a2 = (self._elliptic(state[1], self._q[1])
              - fr["rate_b"] * fr["bilinear"] + fr["rate_g"] * fr["v2"])
        a3 = self._elliptic(state[2], self._q[2]) - fr["rate_g"] * fr["v2"]
        return np.stack([a1, a2, a3])

    def residual_at(self, state: np.ndarray, j: int, i: int, jj: int,
                    s: int) -> float:
        """Single residual value; j in {1,2,3}, (i, jj) interior node index."""
        if not (0 < i < self.sgrid.num_nodes - 1
                and 0 < jj < self.sgrid.num_nodes - 1):
            raise calculus.BoundaryNode(f"({i}, {jj}) is not interior")
        return float(self.residuals(state)[j - 1, s, i - 1, jj - 1])

    def linearized(self, state: np.ndarray, direction: np.ndarray,
                   frame: dict | None = None) -> np.ndarray:
        """Derivative of the residuals at ``state`` applied to ``direction``."""
        fr = frame or self._frame(state)
        d1, d2, d3 = direction
        inner = (slice(None), slice(1, -1), slice(1, -1))
        i_d1, i_d2 = d1[inner], d2[inner]
        drate_b = self._i_inv_fsfi * (-i_d1 + self._cumdt(d1)[inner])
        drate_g = self._i_inv_fi * (d3[inner] - self._cumdt(d3)[inner])
        dbilinear = (i_d1 * fr["pop_i"] + fr["v1"] * self._cum(d2)[inner]
                     + i_d2 * fr["pop_s"] + fr["v2"] * self._cum(d1)[inner])
        beta_part = fr["rate_b"] * dbilinear + drate_b * fr["bilinear"]
        gamma_part = fr["rate_g"] * i_d2 + drate_g * fr["v2"]
        a1 = self._elliptic(d1, self._q[0]) + beta_part
        a2 = self._elliptic(d2, self._q[1]) - beta_part + gamma_part
        a3 = self._elliptic(d3, self._q[2]) - gamma_part
        return np.stack([a1, a2, a3])

    def linearized_adjoint(self, state: np.ndarray, resid: np.ndarray,
                           frame: dict | None = None) -> np.ndarray:
        """Exact transpose of :meth:`linearized` in the plain inner product."""
        fr = frame or self._frame(state)
        r1, r2, r3 = resid
        k1 = self.tgrid.num_steps + 1
        n = self.sgrid.num_nodes
        g = np.zeros((3, k1, n, n))
        gi = np.zeros((3, k1, n - 2, n - 2))

        cum_t = self.cum_mat.T
        cumdt_t = self.cumdt_mat.T

        # beta_part enters a1 with +, a2 with -; gamma_part a2 with +, a3 with -
        t_beta = fr["rate_b"] * (r1 - r2)
        gi[0] += fr["pop_i"] * t_beta
        gi[1] += fr["pop_s"] * t_beta
        gi[0] += calculus.apply_along_time(cum_t, fr["v2"] * t_beta)
        gi[1] += calculus.apply_along_time(cum_t, fr["v1"] * t_beta)
        u_beta = self._i_inv_fsfi * fr["bilinear"] * (r1 - r2)
        gi[0] += -u_beta + calculus.apply_along_time(cumdt_t, u_beta)

        t_gamma = fr["rate_g"] * (r2 - r3)
        gi[1] += t_gamma
        u_gamma = self._i_inv_fi * fr["v2"] * (r2 - r3)
        gi[2] += u_gamma - calculus.apply_along_time(cumdt_t, u_gamma)

        g[:, :, 1:-1, 1:-1] = gi
        g[0] += self._elliptic_adjoint(r1, self._q[0])
        g[1] += self._elliptic_adjoint(r2, self._q[1])
        g[2] += self._elliptic_adjoint(r3, self._q[2])
        return g

    def objective(self, state: np.ndarray, frame: dict | None = None) -> float:
        """Weighted sum of squared residuals over interior and time nodes."""
        a = self.residuals(state, frame)
        return float(np.sum(a * a * self.quad_weight))

    def project(self, g: np.ndarray) -> np.ndarray:
        """Zero the pinned outer layers, keeping both boundary traces fixed."""
        return g * self.mask

    def value_and_gradient(self, state: np.ndarray) -> tuple[float, np.ndarray]:
        fr = self._frame(state)
        a = self.residuals(state, fr)
        value = float(np.sum(a * a * self.quad_weight))
        g = self.linearized_adjoint(state, 2.0 * self.quad_weight * a, fr)
        return value, self.project(g)

    def gradient(self, state: np.ndarray) -> np.ndarray:
        return self.value_and_gradient(state)[1]


def recover_rates(state: np.ndarray, problem: SirProblem,
                  sgrid: SpatialGrid) -> tuple[np.ndarray, np.ndarray]:
    """Infection and recovery rate fields from the initial time slice.

    beta = (f_S f_I)^-1 [ -v1(x, 0) + Lap f_S - div(f_S q_S) ],
    gamma = f_I^-1 [ v3(x, 0) - Lap f_R + div(f_R q_R) ]; affine in the
    state and dependent only on its first time slice.
    """
    if np.min(np.abs(problem.f_s)) < problem.c_floor \
            or np.min(np.abs(problem.f_i)) < problem.c_floor:
        raise FloorViolated("initial fields dip below the positivity floor")
    dx = sgrid.spacing
    lap = lambda f: (calculus.second_derivative(f, dx, axis=0)
                     + calculus.second_derivative(f, dx, axis=1))
    div = calculus.divergence
    source_s = lap(problem.f_s) - div(problem.f_s * problem.q_s[0],
                                      problem.f_s * problem.q_s[1], dx)
    source_r = -lap(problem.f_r) + div(problem.f_r * problem.q_r[0],
                                       problem.f_r * problem.q_r[1], dx)
    beta = (-state[0, 0] + source_s) / (problem.f_s * problem.f_i)
    gamma = (state[2, 0] + source_r) / problem.f_i
    return beta, gamma


# ---------------------------------------------------------------------------
# descent
# ---------------------------------------------------------------------------

@dataclass
class DescentConfig:
    """Gradient-descent settings.

    ``omega`` is the step size; None selects 0.1 over a power-iteration
    estimate of the local curvature.  ``ball_radius`` only triggers a
    warning when an iterate's norm leaves the ball; iteration continues.
    """

    lam: float = 3.0
    omega: float | None = None
    max_iter: int = 2000
    tol_grad: float = 0.0
    ball_radius: float | None = None
    backtrack: float = 0.5
    grow: float = 2.0
    grow_every: int = 1
    stall_rtol: float = 1e-13
    stall_window: int = 40
    precondition: bool = True
    sigma: float = 1.0
    pinned_layers: int = 3
    tail_window: int = 10

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.omega is not None and not 0.0 < self.omega < 1.0:
            raise ValueError("an explicit omega must lie in (0, 1)")
        if not 0.0 < self.backtrack < 1.0:
            raise ValueError("backtrack factor must lie in (0, 1)")
        if self.max_iter < 0 or self.tail_window < 2:
            raise ValueError("bad iteration limits")


class SmoothingPreconditioner:
    """Screened-diffusion smoothing of the gradient on the free block.

    Applies (sigma I - Lap)^-1 per component and time slice with zero
    boundary values on the pinned frame, sandwiched between multiplications
    by the inverse square root of the spatial weight so the map stays
    symmetric positive definite on the free subspace.
    """

    def __init__(self, sgrid: SpatialGrid, lam: float, layers: int,
                 sigma: float):
        m = sgrid.num_nodes - 2 * layers
        if m < 1:
            raise ValueError("no free nodes left to precondition")
        self.layers = layers
        dx = sgrid.spacing
        k1 = (np.diag(np.full(m, 2.0)) - np.diag(np.ones(m - 1), 1)
              - np.diag(np.ones(m - 1), -1)) / dx**2
        evals, evecs = np.linalg.eigh(k1)
        self._evecs = evecs
        self._denom = sigma + evals[:, None] + evals[None, :]
        x1, _ = sgrid.mesh()
        block = np.exp(2.0 * lam * x1 * x1)[layers:-layers, layers:-layers]
        self._inv_sqrt_w = 1.0 / np.sqrt(block)

    def apply(self, g: np.ndarray) -> np.ndarray:
        ell = self.layers
        sl = slice(ell, -ell)
        block = g[..., sl, sl] * self._inv_sqrt_w
        u = self._evecs
        t = np.einsum("ab,...bc,cd->...ad", u.T, block, u)
        t /= self._denom
        t = np.einsum("ab,...bc,cd->...ad", u, t, u.T)
        out = np.zeros_like(g)
        out[..., sl, sl] = t * self._inv_sqrt_w
        return out


def _curvature_estimate(op: InversionOperator, state: np.ndarray,
                        precond: SmoothingPreconditioner | None,
                        iters: int = 12, seed: int = 1234) -> float:
    """Power-iteration estimate of the dominant local curvature."""
    rng = np.random.default_rng(seed)
    fr = op._frame(state)
    d = op.project(rng.standard_normal(state.shape))
    d /= np.linalg.norm(d)
    top = 1.0
    for _ in range(iters):
        hd = op.linearized_adjoint(
            state, 2.0 * op.quad_weight * op.linearized(state, d, fr), fr)
        hd = op.project(hd)
        if precond is not None:
            hd = precond.apply(hd)
        top = float(np.linalg.norm(hd))
        if top == 0.0:
            return 1.0
        d = hd / top
    return top


@dataclass
class DescentResult:
    state: np.ndarray
    history: list[dict] = field(default_factory=list)
    stop_reason: str = ""
    theta_hat: float = np.nan
    ball_exceeded: bool = False
    omega_initial: float = np.nan
    omega_final: float = np.nan

    @property
    def iterations(self) -> int:
        return max(len(self.history) - 1, 0)

    @property
    def final_objective(self) -> float:
        return self.history[-1]["objective"] if self.history else np.nan


def gradient_descent(state0: np.ndarray, cfg: DescentConfig,
                     op: InversionOperator) -> DescentResult:
    """Minimize the weighted functional from a boundary-compatible start.

    Iterates state <- state - omega * direction, where the direction is the
    projected gradient (optionally smoothed); the projection keeps the three
    outermost layers, hence both boundary traces, identical across iterates.
    Backtracking halves omega until the objective decreases; accepted
    objective values are therefore strictly monotone.
    """
    state = check_state(state0, op.tgrid, op.sgrid).copy()
    precond = (SmoothingPreconditioner(op.sgrid, op.lam, cfg.pinned_layers,
                                       cfg.sigma)
               if cfg.precondition else None)
    value, grad = op.value_and_gradient(state)
    gnorm = float(np.linalg.norm(grad))

    omega = cfg.omega
    if omega is None:
        top = _curvature_estimate(op, state, precond)
        omega = 0.1 / top
    omega_floor = omega * 1e-16
    result = DescentResult(state=state, omega_initial=omega)

    tail: list[np.ndarray] = [state.copy()]
    prev_step_norm = np.nan
    values = [value]

    def record(it, om, theta):
        result.history.append({
            "iteration": it,
            "objective": value,
            "grad_norm": gnorm,
            "state_norm": state_norm(state, op.sgrid),
            "omega": om,
            "theta_step": theta,
        })

    record(0, omega, np.nan)
    if cfg.ball_radius is not None \
            and result.history[0]["state_norm"] > cfg.ball_radius:
        result.ball_exceeded = True
        warnings.warn("starting point outside the admissible ball",
                      BallExceededWarning)

    it = 0
    result.stop_reason = "max_iter"
    while it < cfg.max_iter:
        if gnorm <= cfg.tol_grad:
            result.stop_reason = "grad_tol"
            break
        direction = precond.apply(grad) if precond is not None else grad
        trial = state - omega * direction
        trial_value = op.objective(trial)
        while not trial_value < value:
            if omega <= omega_floor:
                if trial_value <= value * (1.0 + 1e-12):
                    result.stop_reason = "stalled"
                    break
                raise Diverged("step size underflowed during backtracking")
            omega *= cfg.backtrack
            trial = state - omega * direction
            trial_value = op.objective(trial)
        if result.stop_reason == "stalled":
            break

        step = trial - state
        step_norm = float(np.linalg.norm(step))
        theta_step = (step_norm / prev_step_norm
                      if prev_step_norm and np.isfinite(prev_step_norm)
                      else np.nan)
        prev_step_norm = step_norm
        state = trial
        value = trial_value
        _, grad = op.value_and_gradient(state)
        gnorm = float(np.linalg.norm(grad))
        it += 1
        record(it, omega, theta_step)
        values.append(value)

        if cfg.ball_radius is not None and not result.ball_exceeded \
                and result.history[-1]["state_norm"] > cfg.ball_radius:
            result.ball_exceeded = True
            warnings.warn(
                f"iterate {it} left the admissible ball "
                f"(norm {result.history[-1]['state_norm']:.4g} > "
                f"{cfg.ball_radius:.4g}); continuing", BallExceededWarning)

        tail.append(state.copy())
        if len(tail) > cfg.tail_window + 1:
            tail.pop(0)
        if it % max(cfg.grow_every, 1) == 0:
            omega *= cfg.grow
        w = cfg.stall_window
        if len(values) > w and values[-1 - w] - values[-1] \
                <= cfg.stall_rtol * max(abs(values[-1]), 1e-300):
            result.stop_reason = "stalled"
            break
    if gnorm <= cfg.tol_grad and result.stop_reason == "max_iter":
        result.stop_reason = "grad_tol"

    result.state = state
    result.omega_final = omega
    if len(tail) >= 3:
        dists = [state_norm(t - state, op.sgrid) for t in tail[:-1]]
        ratios = [dists[i + 1] / dists[i] for i in range(len(dists) - 1)
                  if dists[i] > 0]
        if ratios:
            result.theta_hat = float(np.exp(np.mean(np.log(
                np.clip(ratios, 1e-12, None)))))
    return result
