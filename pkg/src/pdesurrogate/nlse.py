"""Ground state of the discrete cubic Schroedinger equation.

Solves  (L u)_i + a_i u_i + s u_i^3 = E u_i  with  h^d sum u_i^2 = 1  by
continuation in the nonlinearity strength s: the linear case s = 0 is a
symmetric eigenvalue problem (shifted inverse power iteration with CG inner
solves), and each subsequent s is corrected by Newton's method on the
bordered system

    [ L + diag(a) + 3 s diag(u^2) - E I   -u ] [du]   [ -residual   ]
    [           2 h^d u^T                  0 ] [dE] = [ -constraint ].

The ground state is nodeless; the sign gauge is fixed by sum u_i > 0 after
every solve so homotopy warm starts stay coherent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateCoefficient, NotConverged, SingularJacobian
from .grid import Field, GridSpec, apply_laplacian
from .iterative import conjugate_gradient

DEFAULT_TOL = 1e-10
NEWTON_MAX_ITER = 50


@dataclass
class NlseState:
    """Normalized ground-state candidate at nonlinearity strength s."""

    u: Field
    e0: float
    s: float
    residual_norm: float


def nlse_residual(state: NlseState, a: Field, s: float) -> Field:
    """Pointwise residual Lu + a*u + s*u^3 - E*u."""
    u = state.u
    lu = apply_laplacian(u).values
    r = lu + a.values * u.values + s * u.values**3 - state.e0 * u.values
    return Field(r, u.grid)


def _residual_vec(u: np.ndarray, e0: float, a: Field, s: float) -> np.ndarray:
    g = a.grid
    lu = apply_laplacian(Field(u, g)).values
    return lu + a.values * u + s * u**3 - e0 * u


def _normalize(u: np.ndarray, g: GridSpec) -> np.ndarray:
    """Rescale to h^d sum u^2 = 1 and fix the sign gauge sum u > 0."""
    u = u * (g.size**0.5 / np.linalg.norm(u))
    if u.sum() < 0.0:
        u = -u
    return u


def dense_laplacian(g: GridSpec) -> np.ndarray:
    """Dense periodic Laplacian, Kronecker sum of 1D circulants.

    Used only to factorize the bordered Newton system; stencil application
    elsewhere stays matrix-free.
    """
    n = g.n
    eye = np.eye(n)
    c1d = (2.0 * eye - np.roll(eye, 1, axis=1) - np.roll(eye, -1, axis=1)) * float(n) ** 2
    lap = np.zeros((g.size, g.size))
    for k in range(g.d):
        term = np.eye(1)
        for j in range(g.d):
            term = np.kron(term, c1d if j == k else eye)
        lap += term
    return lap


def linear_ground_state(a: Field, tol: float = DEFAULT_TOL) -> NlseState:
    """Smallest eigenpair of L + diag(a) by shifted inverse power iteration.

    The shift sits below min(a) <= E so the shifted operator is SPD and the
    inner CG solves are well posed.  Converged when the residual of the
    normalized eigenvector is below ``tol``.
    """
    if np.any(a.values <= 0.0):
        raise DegenerateCoefficient(
            f"potential must be positive, min = {a.values.min()}"
        )
    g = a.grid
    shift = float(a.values.min()) - 1.0
    scale = g.size**0.5  # |u| at target normalization

    def apply_h(x: np.ndarray) -> np.ndarray:
        return apply_laplacian(Field(x, g)).values + a.values * x

    def apply_shifted(x: np.ndarray) -> np.ndarray:
        return apply_h(x) - shift * x

    # positive start: cannot be orthogonal to the positive ground state
    v = np.ones(g.size) / scale
    e0 = float(v @ apply_h(v))
    max_outer = 200
    for _ in range(max_outer):
        hv = apply_h(v)
        e0 = float(v @ hv)
        resid = float(np.linalg.norm(hv - e0 * v))
        if resid * scale <= tol:
            u = _normalize(v, g)
            return NlseState(
                u=Field(u, g), e0=e0, s=0.0,
                residual_norm=float(np.linalg.norm(apply_h(u) - e0 * u)),
            )
        w, _, _ = conjugate_gradient(
            apply_shifted, v, tol=1e-14, max_iter=40 * g.size,
            x0=v / (e0 - shift),
        )
        v = w / np.linalg.norm(w)
    raise NotConverged(
        f"inverse power iteration stalled at residual {resid * scale:.3e}",
        best=NlseState(u=Field(_normalize(v, g), g), e0=e0, s=0.0,
                       residual_norm=resid * scale),
        residual_norm=resid * scale,
    )


def newton_correct(
    state: NlseState,
    a: Field,
    s: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = NEWTON_MAX_ITER,
) -> NlseState:
    """Newton iteration on the bordered system from a warm start.

    Converged when both the equation residual and the normalization defect
    are below ``tol``.
    """
    g = a.grid
    hd = g.cell_volume
    u = state.u.values.copy()
    e0 = float(state.e0)
    h_dense = dense_laplacian(g) + np.diag(a.values)

    best_u, best_e0, best_res = u, e0, np.inf
    for _ in range(max_iter):
        r = _residual_vec(u, e0, a, s)
        constraint = hd * float(u @ u) - 1.0
        res_norm = float(np.linalg.norm(r))
        if res_norm < best_res:
            best_u, best_e0, best_res = u.copy(), e0, res_norm
        if res_norm <= tol and abs(constraint) <= tol:
            u = u if u.sum() > 0.0 else -u
            return NlseState(u=Field(u, g), e0=e0, s=s, residual_norm=res_norm)
        jac = np.empty((g.size + 1, g.size + 1))
        jac[: g.size, : g.size] = h_dense
        diag = jac[: g.size, : g.size].ravel()[:: g.size + 1]
        diag += 3.0 * s * u**2 - e0
        jac[: g.size, g.size] = -u
        jac[g.size, : g.size] = 2.0 * hd * u
        jac[g.size, g.size] = 0.0
        rhs = np.concatenate([-r, [-constraint]])
        try:
            step = np.linalg.solve(jac, rhs)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobian(f"bordered Newton system singular at s={s}") from exc
        if not np.all(np.isfinite(step)):
            raise SingularJacobian(f"bordered Newton step not finite at s={s}")
        u = u + step[: g.size]
        e0 = e0 + float(step[g.size])
    raise NotConverged(
        f"Newton: residual {best_res:.3e} after {max_iter} iterations at s={s}",
        best=NlseState(u=Field(best_u, g), e0=best_e0, s=s, residual_norm=best_res),
        residual_norm=best_res,
    )


def ground_state_homotopy(
    a: Field,
    sigma: float = 2.0,
    step: float = 0.4,
    tol: float = DEFAULT_TOL,
    newton_max_iter: int = NEWTON_MAX_ITER,
) -> NlseState:
    """Continuation from the linear problem to nonlinearity strength sigma.

    Each stage s_i = i * step is Newton-corrected from the previous stage's
    (u, E); failures report the stage that broke.
    """
    if sigma < 0.0:
        raise ValueError("sigma must be nonnegative")
    state = linear_ground_state(a, tol)
    if sigma == 0.0:
        return state
    n_stages = round(sigma / step)
    if n_stages < 1 or abs(n_stages * step - sigma) > 1e-12:
        raise ValueError(f"step {step} does not divide sigma {sigma} evenly")
    for i in range(1, n_stages + 1):
        s = i * step
        try:
            state = newton_correct(state, a, s, tol, newton_max_iter)
        except (NotConverged, SingularJacobian) as exc:
            raise NotConverged(
                f"homotopy failed at s={s}: {exc}", best=state
            ) from exc
    return state
