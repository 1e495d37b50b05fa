"""Acceptance criteria, one test per criterion, each at its stated tolerance.

A one-line pass/fail summary per criterion is printed in the terminal
summary section (see conftest).  The closed-loop criteria share a
module-scoped baseline run.
"""

import time

import numpy as np
import pytest

from conftest import record_criterion
from epirate import calculus, carleman, experiment, inversion, presets
from epirate.experiment import ExperimentConfig, run_experiment
from epirate.forward import solve_forward
from epirate.grids import build_spatial_grid, build_temporal_grid
from mms import mms_relative_error

DESK_RAW = {
    "grid": {"lo": 0.5, "hi": 1.5, "nodes": 33, "final_time": 1.0,
             "steps": 10, "min_step": 0.05, "fine_factor": 10},
    "problem": {"preset": "gaussian-bumps"},
    "noise": {"level": 0.0, "seed": 7},
    "descent": {"lam": 3.0, "max_iter": 1500},
}


@pytest.fixture(scope="module")
def desk_outdir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="module")
def desk_report(desk_outdir):
    cfg = ExperimentConfig.from_dict(DESK_RAW)
    report = run_experiment(cfg, desk_outdir / "baseline")
    return cfg, report


def test_criterion_01_stencil_and_quadrature_exactness():
    t0 = time.perf_counter()
    tg = build_temporal_grid(1.0, 10, 0.05)
    dmat = calculus.time_derivative_matrix(tg.num_steps, tg.step)
    d_err = float(np.max(np.abs(dmat @ tg.nodes**2 - 2.0 * tg.nodes)))
    d_scale = 2.0 * tg.final_time
    cmat = calculus.cumulative_integral_matrix(tg.num_steps, tg.step)
    series = 1.4 * tg.nodes - 0.3
    exact = 0.7 * tg.nodes**2 - 0.3 * tg.nodes
    c_err = float(np.max(np.abs(cmat @ series - exact)))
    c_scale = float(np.max(np.abs(exact)))
    ok = d_err <= 1e-12 * d_scale and c_err <= 1e-12 * max(c_scale, 1.0)
    record_criterion(1, "stencil-quadrature-exactness", ok,
                     f"derivative err {d_err:.2e}, integral err {c_err:.2e}, "
                     f"{time.perf_counter() - t0:.2f}s")
    assert ok


def test_criterion_02_forward_conservation():
    t0 = time.perf_counter()
    sg = build_spatial_grid(0.5, 1.5, 33)
    problem = presets.build_problem(
        {"preset": "gaussian-bumps", "burn_in": 0.0,
         "velocities": {"q_s": (0, 0), "q_i": (0, 0), "q_r": (0, 0)}},
        sg, 0.01)
    fine = build_temporal_grid(1.0, 100, 1e-3)
    tg = build_temporal_grid(1.0, 10, 0.05)
    traj = solve_forward(problem, fine, sg, tg, keep_fine=False)
    drift = float(np.max(np.abs(traj.mass_total - traj.mass_total[0]))
                  / abs(traj.mass_total[0]))
    ok = drift <= 1e-6
    record_criterion(2, "forward-conservation", ok,
                     f"relative drift {drift:.2e}, "
                     f"{time.perf_counter() - t0:.1f}s")
    assert ok


def test_criterion_03_manufactured_solution_convergence():
    t0 = time.perf_counter()
    e9 = mms_relative_error(9, 80)
    e17 = mms_relative_error(17, 320)
    e33 = mms_relative_error(33, 1280)
    r1, r2 = e9 / e17, e17 / e33
    ok = 3.2 <= r1 <= 4.8 and 3.2 <= r2 <= 4.8
    record_criterion(3, "manufactured-solution-convergence", ok,
                     f"ratios {r1:.2f}, {r2:.2f}, "
                     f"{time.perf_counter() - t0:.1f}s")
    assert ok


def test_criterion_04_gradient_correctness(desk17):
    t0 = time.perf_counter()
    tgrid, sgrid, problem = desk17
    op = inversion.InversionOperator(problem, tgrid, sgrid, lam=3.0)
    rng = np.random.default_rng(123)
    state = op.project(rng.normal(0, 0.3, (3, 7, 17, 17)))
    _, grad = op.value_and_gradient(state)
    worst = 0.0
    for _ in range(20):
        d = op.project(rng.normal(size=state.shape))
        d /= np.linalg.norm(d)
        eps = 3e-6 * max(float(np.linalg.norm(state)), 1.0)
        fd = (op.objective(state + eps * d)
              - op.objective(state - eps * d)) / (2.0 * eps)
        ip = float(np.sum(grad * d))
        worst = max(worst, abs(fd - ip) / abs(ip))
    ok = worst <= 1e-5
    record_criterion(4, "gradient-correctness", ok,
                     f"worst relative mismatch {worst:.2e}, "
                     f"{time.perf_counter() - t0:.1f}s")
    assert ok


def test_criterion_05_adjoint_transpose(desk17):
    t0 = time.perf_counter()
    tgrid, sgrid, problem = desk17
    op = inversion.InversionOperator(problem, tgrid, sgrid, lam=3.0)
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(5):
        state = rng.normal(0, 0.3, (3, 7, 17, 17))
        d = rng.normal(size=(3, 7, 17, 17))
        r = rng.normal(size=(3, 7, 15, 15))
        lhs = float(np.sum(op.linearized(state, d) * r))
        rhs = float(np.sum(d * op.linearized_adjoint(state, r)))
        worst = max(worst, abs(lhs - rhs) / abs(lhs))
    ok = worst <= 1e-12
    record_criterion(5, "adjoint-transpose", ok,
                     f"worst relative defect {worst:.2e}, "
                     f"{time.perf_counter() - t0:.1f}s")
    assert ok


def test_criterion_06_strong_convexity_probe(desk17):
    t0 = time.perf_counter()
    tgrid, sgrid, problem = desk17
    mins = []
    for lam in (1, 2, 3, 4, 5):
        op = inversion.InversionOperator(problem, tgrid, sgrid, lam=lam)
        gaps = experiment.convexity_gap_spectrum(op, num_pairs=100, seed=42)
        mins.append(gaps["min_gap"])
    nondecreasing = all(b >= a * 0.999 for a, b in zip(mins, mins[1:]))
    ok = mins[2] > 0 and nondecreasing
    record_criterion(6, "strong-convexity-probe", ok,
                     "min normalized gaps "
                     + ", ".join(f"{m:.3g}" for m in mins)
                     + f", {time.perf_counter() - t0:.1f}s")
    assert ok


def test_criterion_07_carleman_ratio_probe():
    t0 = time.perf_counter()
    sg = build_spatial_grid(0.5, 1.5, 33)
    records = carleman.ratio_probe(sg, lams=(1, 2, 3, 4, 5),
                                   num_samples=200, seed=3)
    ok = all(r["min_ratio"] > 0 for r in records)
    record_criterion(7, "carleman-ratio-probe", ok,
                     "min ratios "
                     + ", ".join(f"{r['min_ratio']:.3f}" for r in records)
                     + f", {time.perf_counter() - t0:.1f}s")
    assert ok


def test_criterion_08_closed_loop_noiseless(desk_report, desk_outdir):
    t0 = time.perf_counter()
    cfg, report = desk_report
    history_path = desk_outdir / "baseline/inversion/history.csv"
    rows = history_path.read_text().strip().split("\n")[1:]
    objectives = [float(r.split(",")[1]) for r in rows]
    monotone = all(b < a for a, b in zip(objectives, objectives[1:]))
    ok = (report.beta_rel_err <= 0.10 and report.gamma_rel_err <= 0.10
          and monotone and report.theta_hat < 1.0)
    record_criterion(8, "closed-loop-noiseless", ok,
                     f"beta err {report.beta_rel_err:.4f}, "
                     f"gamma err {report.gamma_rel_err:.4f}, "
                     f"monotone {monotone}, theta {report.theta_hat:.3f}, "
                     f"{report.wall_time:.0f}s")
    assert ok


def test_criterion_09_noise_scaling(desk_report, desk_outdir):
    t0 = time.perf_counter()
    cfg, _ = desk_report
    errs = {}
    for delta in (0.01, 0.02, 0.04):
        raw = cfg.to_dict()
        raw["noise"]["level"] = delta
        raw["output"]["figures"] = False
        rep = run_experiment(ExperimentConfig.from_dict(raw),
                             desk_outdir / f"noise_{delta:g}")
        errs[delta] = (rep.beta_rel_err, rep.gamma_rel_err)
    finite = all(np.isfinite(v) for pair in errs.values() for v in pair)
    ratios = [errs[0.02][i] / errs[0.01][i] for i in range(2)] + \
             [errs[0.04][i] / errs[0.02][i] for i in range(2)]
    ok = finite and all(r <= 3.0 for r in ratios)
    record_criterion(9, "noise-scaling", ok,
                     "errors " + ", ".join(
                         f"d={d:g}:({b:.4f},{g:.4f})"
                         for d, (b, g) in errs.items())
                     + f"; doubling ratios {[round(r, 2) for r in ratios]}, "
                     f"{time.perf_counter() - t0:.0f}s")
    assert ok


def test_criterion_10_global_convergence_probe(desk_report, desk_outdir):
    t0 = time.perf_counter()
    cfg, base_report = desk_report
    raw = cfg.to_dict()
    raw["output"]["figures"] = False
    rep2 = run_experiment(ExperimentConfig.from_dict(raw),
                          desk_outdir / "zero_start",
                          start_mode="zero-interior")
    beta_a, _ = experiment.serialize.read_field_slice(
        desk_outdir / "baseline/rates/beta.csv")
    beta_b, _ = experiment.serialize.read_field_slice(
        desk_outdir / "zero_start/rates/beta.csv")
    gamma_a, _ = experiment.serialize.read_field_slice(
        desk_outdir / "baseline/rates/gamma.csv")
    gamma_b, _ = experiment.serialize.read_field_slice(
        desk_outdir / "zero_start/rates/gamma.csv")
    sg = build_spatial_grid(0.5, 1.5, 33)
    beta_gap = experiment.relative_l2(beta_b, beta_a, sg)
    gamma_gap = experiment.relative_l2(gamma_b, gamma_a, sg)
    tol = max(base_report.beta_rel_err, base_report.gamma_rel_err)
    ok = beta_gap <= tol and gamma_gap <= tol
    record_criterion(10, "global-convergence-probe", ok,
                     f"start disagreement beta {beta_gap:.2e}, gamma "
                     f"{gamma_gap:.2e} vs tolerance {tol:.4f}, "
                     f"{time.perf_counter() - t0:.0f}s")
    assert ok


def test_criterion_11_determinism(tmp_path):
    t0 = time.perf_counter()
    raw = {"grid": {"nodes": 17, "steps": 6, "fine_factor": 6},
           "noise": {"level": 0.05, "seed": 13},
           "descent": {"max_iter": 40},
           "output": {"figures": True}}
    cfg = ExperimentConfig.from_dict(raw)
    run_experiment(cfg, tmp_path / "a")
    run_experiment(cfg, tmp_path / "b")
    same_report = ((tmp_path / "a/report.json").read_bytes()
                   == (tmp_path / "b/report.json").read_bytes())
    same_manifest = ((tmp_path / "a/manifest.json").read_bytes()
                     == (tmp_path / "b/manifest.json").read_bytes())
    ok = same_report and same_manifest
    record_criterion(11, "determinism", ok,
                     f"report bytes equal {same_report}, manifest bytes "
                     f"equal {same_manifest}, {time.perf_counter() - t0:.1f}s")
    assert ok
