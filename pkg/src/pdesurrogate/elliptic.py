"""Cell problem L_a u = b_a and the effective conductance functional.

L_a is symmetric positive semidefinite with nullspace span{1}; b_a is
orthogonal to 1, so the system is consistent.  We solve it by conjugate
gradients on the mean-zero subspace, re-projecting the mean out every
iteration, and evaluate

    A_eff(a) = 2 min_u E(u; a) = h^d (u*^T L_a u* - 2 u*^T b_a + a^T 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateCoefficient
from .grid import Direction, Field, apply_La, assemble_ba, axis_direction, energy
from .iterative import conjugate_gradient, project_mean_zero

DEFAULT_TOL = 1e-10


@dataclass
class EllipticSolveReport:
    """Converged cell-problem solve: minimizer, iteration count and A_eff."""

    u: Field
    iterations: int
    residual_norm: float
    a_eff: float


def _check_coefficient(a: Field):
    if np.any(a.values <= 0.0):
        raise DegenerateCoefficient(
            f"coefficient must be positive everywhere, min = {a.values.min()}"
        )


def solve_cell_problem(
    a: Field,
    xi: Direction | None = None,
    tol: float = DEFAULT_TOL,
    max_iter: int | None = None,
) -> EllipticSolveReport:
    """CG solve of L_a u = b_a on {u : 1^T u = 0}.

    Stops at ||L_a u - b_a|| <= tol * ||b_a||; if b_a vanishes (constant
    coefficient) the minimizer is u = 0.
    """
    _check_coefficient(a)
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    g = a.grid
    if xi is None:
        xi = axis_direction(g.d, 0)
    if max_iter is None:
        max_iter = 10 * g.size
    b = assemble_ba(a, xi).values

    def op(x: np.ndarray) -> np.ndarray:
        return apply_La(a, Field(x, g)).values

    u, iterations, residual = conjugate_gradient(
        op, b, tol=tol, max_iter=max_iter, project=project_mean_zero
    )
    u_field = Field(u, g)
    a_eff = 2.0 * energy(u_field, a, xi)
    return EllipticSolveReport(
        u=u_field, iterations=iterations, residual_norm=residual, a_eff=a_eff
    )


def effective_conductance(
    a: Field, xi: Direction | None = None, tol: float = DEFAULT_TOL
) -> float:
    """A_eff(a) = 2 min E(u; a); lies in [min(a), mean(a)]."""
    return solve_cell_problem(a, xi, tol).a_eff


def harmonic_mean_1d(a: Field) -> float:
    """Nodal harmonic mean ((1/n) sum 1/a_i)^{-1}; the 1D closed form."""
    if a.grid.d != 1:
        raise ValueError(f"harmonic mean is for 1D fields, got d = {a.grid.d}")
    if np.any(a.values <= 0.0):
        raise DegenerateCoefficient(
            f"harmonic mean needs positive entries, min = {a.values.min()}"
        )
    return float(1.0 / np.mean(1.0 / a.values))


def half_grid_harmonic_mean_1d(a: Field) -> float:
    """Harmonic mean of the half-grid coefficients (a_i + a_{i+1})/2.

    This equals the 1D discrete A_eff exactly: the flux
    a_{i+1/2} (xi + (u_{i+1} - u_i)/h) of the minimizer is constant in i.
    """
    if a.grid.d != 1:
        raise ValueError(f"half-grid harmonic mean is for 1D fields, got d = {a.grid.d}")
    half = 0.5 * (a.values + np.roll(a.values, -1))
    if np.any(half <= 0.0):
        raise DegenerateCoefficient("half-grid coefficients must be positive")
    return float(1.0 / np.mean(1.0 / half))
