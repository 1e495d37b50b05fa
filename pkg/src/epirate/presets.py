"""Closed-form field recipes and named experiment presets.

A recipe is a small dict describing one scalar field on the mesh: a
constant, a linear ramp, a cosine background (whose normal slope vanishes on
the square's edges, keeping initial data compatible with zero-flux
boundaries), or a constant background plus Gaussian bumps.  Presets bundle
recipes for the initial populations, velocities and true rate fields.

Initial population fields are optionally pre-equilibrated: the forward
solver is run for a burn-in interval (at the same fine step the synthesis
run will use) and its final state replaces the seed fields.  Measurement
then starts after the fast diffusive transient of the seed data has died
out, which is what the coarse measurement time grid can actually resolve.
"""

from __future__ import annotations

import numpy as np

from . import forward
from .grids import SpatialGrid, build_temporal_grid


class RecipeError(ValueError):
    """Malformed field recipe or preset."""


def evaluate_recipe(recipe: dict, sgrid: SpatialGrid) -> np.ndarray:
    """Evaluate one scalar-field recipe on the mesh."""
    x1, x2 = sgrid.mesh()
    kind = recipe.get("kind")
    if kind == "constant":
        return np.full((sgrid.num_nodes,) * 2, float(recipe["value"]))
    if kind == "ramp":
        sx, sy = recipe.get("slope", (0.0, 0.0))
        mid = 0.5 * (sgrid.lo + sgrid.hi)
        return float(recipe["base"]) + sx * (x1 - mid) + sy * (x2 - mid)
    if kind == "cosine":
        width = sgrid.hi - sgrid.lo
        xi1 = (x1 - sgrid.lo) / width
        xi2 = (x2 - sgrid.lo) / width
        out = np.full_like(x1, float(recipe["base"]))
        for mode in recipe.get("modes", ()):
            out += float(mode["amplitude"]) \
                * np.cos(np.pi * mode.get("p", 1) * xi1) \
                * np.cos(np.pi * mode.get("q", 1) * xi2)
        return out
    if kind == "gaussian":
        out = np.full_like(x1, float(recipe["base"]))
        for bump in recipe.get("bumps", ()):
            cx, cy = bump["center"]
            wdt = float(bump["width"])
            out += float(bump["amplitude"]) * np.exp(
                -((x1 - cx) ** 2 + (x2 - cy) ** 2) / (2.0 * wdt * wdt))
        return out
    raise RecipeError(f"unknown field recipe kind: {kind!r}")


def constant_velocity(value: tuple[float, float],
                      sgrid: SpatialGrid) -> np.ndarray:
    v = np.asarray(value, dtype=float)
    if v.shape != (2,):
        raise RecipeError("velocity must be a 2-vector")
    return np.broadcast_to(v[:, None, None],
                           (2, sgrid.num_nodes, sgrid.num_nodes)).copy()


DESK_RECIPE = {
    "fields": {
        # susceptibles drain during burn-in; the seed base keeps the settled
        # field comfortably above the positivity floor
        "f_s": {"kind": "cosine", "base": 1.5,
                "modes": [{"amplitude": 0.3, "p": 1, "q": 1}]},
        "f_i": {"kind": "cosine", "base": 0.8,
                "modes": [{"amplitude": 0.2, "p": 0, "q": 1}]},
        "f_r": {"kind": "cosine", "base": 0.3,
                "modes": [{"amplitude": 0.1, "p": 1, "q": 0}]},
    },
    "beta": {"kind": "gaussian", "base": 0.8,
             "bumps": [{"amplitude": 0.6, "center": (0.85, 1.15),
                        "width": 0.12}]},
    "gamma": {"kind": "gaussian", "base": 0.4,
              "bumps": [{"amplitude": 0.3, "center": (1.15, 0.85),
                         "width": 0.12}]},
    "velocities": {"q_s": (0.05, -0.04), "q_i": (0.03, 0.02),
                   "q_r": (-0.02, 0.03)},
    "c_floor": 0.5,
    "burn_in": 0.5,
}

PRESETS: dict[str, dict] = {
    "gaussian-bumps": DESK_RECIPE,
    "constant-rates": {
        **DESK_RECIPE,
        "beta": {"kind": "constant", "value": 0.9},
        "gamma": {"kind": "constant", "value": 0.5},
    },
    "ramp-rates": {
        **DESK_RECIPE,
        "beta": {"kind": "ramp", "base": 0.9, "slope": (0.3, 0.0)},
        "gamma": {"kind": "ramp", "base": 0.5, "slope": (0.0, -0.2)},
    },
}


def resolve_recipe(problem_cfg: dict) -> dict:
    """Merge a named preset with any explicit recipe overrides."""
    name = problem_cfg.get("preset", "gaussian-bumps")
    if name not in PRESETS:
        raise RecipeError(
            f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    recipe = {**PRESETS[name]}
    for key in ("fields", "beta", "gamma", "velocities", "c_floor", "burn_in"):
        if key in problem_cfg:
            recipe[key] = problem_cfg[key]
    return recipe


def build_problem(problem_cfg: dict, sgrid: SpatialGrid,
                  fine_step: float) -> forward.SirProblem:
    """Materialize a problem from its recipe, burn-in included.

    The burn-in runs at ``fine_step`` exactly, so the pre-equilibrated state
    sits on the same discrete slow manifold the synthesis run evolves on (a
    coarser burn-in leaves a restart transient the measurement grid cannot
    represent).
    """
    recipe = resolve_recipe(problem_cfg)
    fields = {name: evaluate_recipe(recipe["fields"][name], sgrid)
              for name in ("f_s", "f_i", "f_r")}
    beta = evaluate_recipe(recipe["beta"], sgrid)
    gamma = evaluate_recipe(recipe["gamma"], sgrid)
    vels = {name: constant_velocity(tuple(recipe["velocities"][name]), sgrid)
            for name in ("q_s", "q_i", "q_r")}
    problem = forward.SirProblem(
        f_s=fields["f_s"], f_i=fields["f_i"], f_r=fields["f_r"],
        q_s=vels["q_s"], q_i=vels["q_i"], q_r=vels["q_r"],
        beta_true=beta, gamma_true=gamma, c_floor=float(recipe["c_floor"]))
    burn = float(recipe.get("burn_in", 0.0))
    if burn > 0.0:
        steps = max(int(round(burn / fine_step)), 3)
        tgb = build_temporal_grid(burn, steps, burn / steps * 0.5)
        settled = forward.solve_forward(problem, tgb, sgrid,
                                        keep_fine=False).measured[:, -1]
        problem = forward.SirProblem(
            f_s=settled[0], f_i=settled[1], f_r=settled[2],
            q_s=vels["q_s"], q_i=vels["q_i"], q_r=vels["q_r"],
            beta_true=beta, gamma_true=gamma,
            c_floor=float(recipe["c_floor"]))
    return problem
