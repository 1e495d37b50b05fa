"""Carleman weight functions and a numerical probe of the weighted estimate.

Two exponential weights are provided: a general two-parameter form built on
the level function x1 + |x2|^2/2 + 1/4 and the simpler single-parameter form
exp(2 * lam * x1^2) used by the inversion (the general form varies too fast
to be convenient in computations).  The probe draws random functions that
vanish on the square's boundary together with their normal derivatives and
measures the ratio

    integral (Lap u)^2 w dx
    -----------------------------------------------------------------
    (1/lam) integral sum_ij (d_i d_j u)^2 w dx
        + lam integral (|grad u|^2 + u^2) w dx

whose infimum over such functions the weighted estimate predicts to be a
positive constant independent of lam.  The probe reports the empirical
infimum; it cannot and does not certify the analytic constant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import calculus
from .grids import SpatialGrid


class NonpositiveLevel(ValueError):
    """General weight evaluated where the level function is not positive."""


class BadMargin(ValueError):
    """Domain margin outside [0, 1/2)."""


class BoundaryViolation(ValueError):
    """Probe sample does not vanish (with normal derivative) on the boundary."""


class BadWeightParameters(ValueError):
    """Weight parameters below 1."""


@dataclass(frozen=True)
class GeneralWeight:
    """exp(2 * lam * level(x)^(-power)); both parameters at least 1."""

    lam: float
    power: float

    def __post_init__(self):
        if self.lam < 1 or self.power < 1:
            raise BadWeightParameters("lam and power must both be >= 1")


@dataclass(frozen=True)
class SimpleWeight:
    """exp(2 * lam * x1^2); lam at least 1."""

    lam: float

    def __post_init__(self):
        if self.lam < 1:
            raise BadWeightParameters("lam must be >= 1")


def level_function(x: tuple[float, float] | np.ndarray) -> float | np.ndarray:
    """x1 + x2^2 / 2 + 1/4 (two spatial dimensions)."""
    x1, x2 = x[0], x[1]
    return x1 + 0.5 * x2 * x2 + 0.25


def weight_at(weight: GeneralWeight | SimpleWeight,
              x: tuple[float, float] | np.ndarray) -> float | np.ndarray:
    """Evaluate a weight at a point (or pointwise on coordinate arrays)."""
    if isinstance(weight, SimpleWeight):
        x1 = np.asarray(x[0], dtype=float)
        out = np.exp(2.0 * weight.lam * x1 * x1)
        return float(out) if out.ndim == 0 else out
    lev = np.asarray(level_function(x), dtype=float)
    if np.any(lev <= 0):
        raise NonpositiveLevel("general weight needs level_function(x) > 0")
    out = np.exp(2.0 * weight.lam * lev ** (-weight.power))
    return float(out) if out.ndim == 0 else out


def simple_weight_values(lam: float, sgrid: SpatialGrid) -> np.ndarray:
    """exp(2 * lam * x1^2) on the mesh; lam = 0 gives the unweighted case."""
    if lam < 0:
        raise BadWeightParameters("lam must be nonnegative")
    x1, _ = sgrid.mesh()
    return np.exp(2.0 * lam * x1 * x1)


def in_level_domain(x: tuple[float, float], margin: float = 0.0) -> bool:
    """Membership in {x1 > 0, level_function(x) < 3/4 - margin}."""
    if not 0.0 <= margin < 0.5:
        raise BadMargin(f"margin must lie in [0, 1/2), got {margin}")
    return x[0] > 0 and level_function(x) < 0.75 - margin


# ---------------------------------------------------------------------------
# estimate probe
# ---------------------------------------------------------------------------

def _check_membership(u: np.ndarray, spacing: float, value_tol: float) -> None:
    """Discrete check that u vanishes on the boundary with flat slope.

    The value trace must vanish to ``value_tol`` relative to the sample
    scale.  The three-point outward-derivative trace of a function that is
    analytically flat at the boundary is not zero but (dx^2 / 3) u''' +
    higher order, so the slope check compares the trace against that
    consistency allowance, with the third derivative estimated from third
    differences along the normal.
    """
    scale = float(np.max(np.abs(u)))
    if np.max(np.abs(calculus.dirichlet_trace(u))) > value_tol * scale:
        raise BoundaryViolation("sample does not vanish on the boundary")
    z = calculus.neumann_trace(u, spacing)
    lines = (u[:5, :], u[::-1][:5, :], u.T[:5, :], u.T[::-1][:5, :])
    for edge, line in zip(z, lines):
        third = (line[3] - 3.0 * line[2] + 3.0 * line[1] - line[0]) / spacing**3
        fourth = (line[4] - 4.0 * line[3] + 6.0 * line[2] - 4.0 * line[1]
                  + line[0]) / spacing**4
        allowance = (2.0 * spacing**2 / 3.0 * np.abs(third)
                     + 0.5 * spacing**3 * np.abs(fourth)
                     + 64.0 * np.finfo(float).eps * scale / spacing)
        if np.any(np.abs(edge) > allowance + value_tol * scale / spacing):
            raise BoundaryViolation(
                "normal derivative of the sample does not vanish on the "
                "boundary")


def estimate_ratio(u: np.ndarray, lam: float, sgrid: SpatialGrid,
                   boundary_tol: float = 1e-10) -> float:
    """Weighted-estimate ratio for one sample that vanishes on the boundary.

    Returns +inf for the identically zero sample (both sides vanish).
    """
    if lam < 1:
        raise BadWeightParameters("lam must be >= 1")
    scale = float(np.max(np.abs(u)))
    if scale == 0.0:
        return np.inf
    _check_membership(u, sgrid.spacing, boundary_tol)
    dx = sgrid.spacing
    w = simple_weight_values(lam, sgrid)
    quad = sgrid.trapezoid_weights()
    h11 = calculus.second_derivative(u, dx, axis=0)
    h22 = calculus.second_derivative(u, dx, axis=1)
    h12 = calculus.mixed_second_derivative(u, dx)
    g1 = calculus.first_derivative(u, dx, axis=0)
    g2 = calculus.first_derivative(u, dx, axis=1)
    lap = h11 + h22
    lhs = float(np.sum(lap * lap * w * quad))
    rhs = (float(np.sum((h11 * h11 + h22 * h22 + 2.0 * h12 * h12) * w * quad)) / lam
           + lam * float(np.sum((g1 * g1 + g2 * g2 + u * u) * w * quad)))
    return lhs / rhs


def random_compactly_flat_sample(sgrid: SpatialGrid, rng: np.random.Generator,
                                 max_mode: int = 4, num_terms: int = 3) -> np.ndarray:
    """Random sum of products of squared sine modes.

    Each term sin^2(p pi xi1) sin^2(q pi xi2) (xi the unit-square coordinate)
    vanishes on the boundary together with its gradient, so the sample lies in
    the probe's admissible class analytically, not just numerically.
    """
    x1, x2 = sgrid.mesh()
    xi1 = (x1 - sgrid.lo) / (sgrid.hi - sgrid.lo)
    xi2 = (x2 - sgrid.lo) / (sgrid.hi - sgrid.lo)
    u = np.zeros_like(x1)
    for _ in range(num_terms):
        p = rng.integers(1, max_mode + 1)
        q = rng.integers(1, max_mode + 1)
        c = rng.normal()
        u += c * np.sin(np.pi * p * xi1) ** 2 * np.sin(np.pi * q * xi2) ** 2
    return u


def ratio_probe(sgrid: SpatialGrid, lams: tuple[float, ...] = (1, 2, 3, 4, 5),
                num_samples: int = 200, seed: int = 0) -> list[dict]:
    """Empirical infimum of the estimate ratio over random admissible samples.

    Returns one record per lam: {"lambda", "n_samples", "min_ratio",
    "mean_ratio"}.  Samples are shared across lam values so the reported
    curve is comparable.
    """
    rng = np.random.default_rng(seed)
    samples = [random_compactly_flat_sample(sgrid, rng) for _ in range(num_samples)]
    records = []
    for lam in lams:
        ratios = np.array([estimate_ratio(u, lam, sgrid) for u in samples])
        ratios = ratios[np.isfinite(ratios)]
        records.append({
            "lambda": float(lam),
            "n_samples": int(len(ratios)),
            "min_ratio": float(np.min(ratios)),
            "mean_ratio": float(np.mean(ratios)),
        })
    return records
