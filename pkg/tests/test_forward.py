import numpy as np
import pytest

from epirate.forward import (BlowUp, FloorViolated, SirProblem, UnstableStep,
                             mass_balance_residual, sir_step, solve_forward)
from epirate.grids import build_spatial_grid, build_temporal_grid


def cosine_problem(n=17, beta_bump=True, q_scale=1.0, neumann=None,
                   lo=0.5, hi=1.5):
    sg = build_spatial_grid(lo, hi, n)
    x1, x2 = sg.mesh()
    w = sg.hi - sg.lo
    xi1, xi2 = (x1 - sg.lo) / w, (x2 - sg.lo) / w
    f_s = 1.2 + 0.3 * np.cos(np.pi * xi1) * np.cos(np.pi * xi2)
    f_i = 0.8 + 0.2 * np.cos(np.pi * xi2)
    f_r = 0.3 + 0.1 * np.cos(np.pi * xi1)
    if beta_bump:
        beta = 0.8 + 0.6 * np.exp(-((x1 - 0.85) ** 2 + (x2 - 1.15) ** 2)
                                  / (2 * 0.12 ** 2))
        gamma = 0.4 + 0.3 * np.exp(-((x1 - 1.15) ** 2 + (x2 - 0.85) ** 2)
                                   / (2 * 0.12 ** 2))
    else:
        beta = np.full((n, n), 0.7)
        gamma = np.full((n, n), 0.4)
    mk = lambda v: np.broadcast_to(
        q_scale * np.asarray(v, dtype=float)[:, None, None], (2, n, n)).copy()
    return sg, SirProblem(f_s, f_i, f_r, mk([0.05, -0.04]), mk([0.03, 0.02]),
                          mk([-0.02, 0.03]), beta, gamma, c_floor=0.5,
                          neumann=neumann)


class TestProblemValidation:
    def test_floor_enforced(self):
        n = 9
        zq = np.zeros((2, n, n))
        with pytest.raises(FloorViolated):
            SirProblem(np.full((n, n), 0.4), np.full((n, n), 1.0),
                       np.zeros((n, n)), zq, zq, zq, c_floor=0.5)

    def test_finite_enforced(self):
        n = 9
        zq = np.zeros((2, n, n))
        bad = np.full((n, n), 1.0)
        bad[3, 3] = np.inf
        with pytest.raises(ValueError):
            SirProblem(np.full((n, n), 1.0), np.full((n, n), 1.0), bad,
                       zq, zq, zq, c_floor=0.5)


class TestStepping:
    def test_constant_steady_state(self, constant_problem):
        sgrid, problem = constant_problem
        state = problem.initial_state()
        new = state
        for _ in range(4):
            new = sir_step(new, problem, sgrid, 0.01)
        np.testing.assert_allclose(new, state, rtol=1e-12)

    def test_recovered_slice_unchanged_without_recovery(self):
        # gamma = 0, q = 0, constant recovered population: third component
        # reduces to diffusion of a constant
        sg = build_spatial_grid(0.5, 1.5, 17)
        n = sg.num_nodes
        x1, x2 = sg.mesh()
        zq = np.zeros((2, n, n))
        problem = SirProblem(1.0 + 0.2 * np.sin(x1), 0.9 + 0.1 * np.cos(x2),
                             np.full((n, n), 0.33), zq, zq, zq,
                             beta_true=np.full((n, n), 0.6),
                             gamma_true=np.zeros((n, n)), c_floor=0.5)
        new = sir_step(problem.initial_state(), problem, sg, 0.01)
        np.testing.assert_allclose(new[2], 0.33, rtol=1e-11)

    def test_single_node_reaction_oracle(self, constant_problem):
        # constant fields make diffusion and transport vanish; one step must
        # match the explicit Euler step of the reaction system exactly
        sgrid, problem = constant_problem
        n = sgrid.num_nodes
        beta = np.full((n, n), 0.8)
        problem = SirProblem(problem.f_s, problem.f_i, problem.f_r,
                             problem.q_s, problem.q_i, problem.q_r,
                             beta_true=beta, gamma_true=np.zeros((n, n)),
                             c_floor=0.5)
        dt = 0.01
        state = problem.initial_state()
        new = sir_step(state, problem, sgrid, dt)
        infect = 0.8 * 1.5 * 0.9
        np.testing.assert_allclose(new[0], 1.5 - dt * infect, rtol=1e-12)
        np.testing.assert_allclose(new[1], 0.9 + dt * infect, rtol=1e-12)
        assert np.all(new[0] < state[0]) and np.all(new[1] > state[1])

    def test_blowup_cap(self, constant_problem):
        sgrid, problem = constant_problem
        with pytest.raises(BlowUp):
            sir_step(problem.initial_state(), problem, sgrid, 0.01,
                     magnitude_cap=1.0)

    def test_transport_stability_guard(self):
        sg, problem = cosine_problem(q_scale=50.0)
        with pytest.raises(UnstableStep):
            sir_step(problem.initial_state(), problem, sg, 0.5)


class TestSolveForward:
    def test_initial_slice_bit_exact(self):
        sg, problem = cosine_problem()
        tgf = build_temporal_grid(0.5, 25, 1e-3)
        tg = build_temporal_grid(0.5, 5, 1e-3)
        traj = solve_forward(problem, tgf, sg, tg)
        assert np.array_equal(traj.measured[:, 0], problem.initial_state())
        assert np.array_equal(traj.fine[:, 0], problem.initial_state())

    def test_constant_trajectory(self, constant_problem):
        sgrid, problem = constant_problem
        tgf = build_temporal_grid(1.0, 40, 1e-3)
        traj = solve_forward(problem, tgf, sgrid)
        np.testing.assert_allclose(
            traj.measured,
            np.broadcast_to(traj.measured[:, :1], traj.measured.shape),
            rtol=1e-12)

    def test_mass_conservation_zero_flux(self):
        sg, problem = cosine_problem(q_scale=0.0)
        tgf = build_temporal_grid(0.5, 50, 1e-3)
        traj = solve_forward(problem, tgf, sg, keep_fine=False)
        drift = np.max(np.abs(traj.mass_total - traj.mass_total[0]))
        assert drift / abs(traj.mass_total[0]) <= 1e-6

    def test_grid_mismatch_rejected(self):
        sg, problem = cosine_problem()
        tgf = build_temporal_grid(1.0, 25, 1e-3)
        tg = build_temporal_grid(1.0, 10, 1e-3)
        with pytest.raises(ValueError):
            solve_forward(problem, tgf, sg, tg)

    def test_rate_of_change_vanishes_for_steady_state(self, constant_problem):
        sgrid, problem = constant_problem
        tgf = build_temporal_grid(1.0, 40, 1e-3)
        tg = build_temporal_grid(1.0, 4, 1e-3)
        traj = solve_forward(problem, tgf, sgrid, tg)
        np.testing.assert_allclose(traj.rate_of_change_on_measurement_grid(),
                                   0.0, atol=1e-9)


class TestMassBalance:
    def test_zero_flux_zero_velocity(self):
        sg, problem = cosine_problem(q_scale=0.0)
        tgf = build_temporal_grid(0.5, 50, 1e-3)
        tg = build_temporal_grid(0.5, 5, 1e-3)
        traj = solve_forward(problem, tgf, sg, tg)
        res = mass_balance_residual(traj)
        assert np.max(np.abs(res)) <= 1e-6 * abs(traj.mass_total[0])

    def test_constant_fields_machine_zero(self, constant_problem):
        sgrid, problem = constant_problem
        tgf = build_temporal_grid(0.5, 20, 1e-3)
        tg = build_temporal_grid(0.5, 4, 1e-3)
        traj = solve_forward(problem, tgf, sgrid, tg)
        res = mass_balance_residual(traj)
        assert np.max(np.abs(res)) <= 1e-12 * abs(traj.mass_total[0])

    def test_prescribed_flux_tracked(self):
        n = 17
        g = np.zeros((3, 4, n))
        g[0] = 0.02  # constant susceptible influx through every edge
        sg, problem = cosine_problem(n=n, q_scale=0.0, neumann=g)
        tgf = build_temporal_grid(0.5, 50, 1e-3)
        tg = build_temporal_grid(0.5, 5, 1e-3)
        traj = solve_forward(problem, tgf, sg, tg)
        # mass is not conserved, but the change matches the flux integral
        assert traj.mass_total[-1] > traj.mass_total[0]
        res = mass_balance_residual(traj)
        assert np.max(np.abs(res)) <= 1e-8 * abs(traj.mass_total[0])


class TestManufacturedSolution:
    def test_second_order_spatial_convergence(self):
        from mms import mms_relative_error
        e9 = mms_relative_error(9, 80)
        e17 = mms_relative_error(17, 320)
        assert 3.2 <= e9 / e17 <= 4.8
