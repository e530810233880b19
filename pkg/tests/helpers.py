"""Independent oracles used across the test suite.

Everything here is assembled entry by entry with explicit index loops so it
shares no code path with the matrix-free operators under test.
"""

import itertools

import numpy as np

from pdesurrogate.grid import Field, GridSpec


def all_indices(g: GridSpec):
    return list(itertools.product(range(g.n), repeat=g.d))


def flat(g: GridSpec, idx) -> int:
    """Row-major flattening of a multi-index (last axis fastest)."""
    out = 0
    for component in idx:
        out = out * g.n + component
    return out


def wrap(g: GridSpec, idx, axis, offset):
    moved = list(idx)
    moved[axis] = (moved[axis] + offset) % g.n
    return tuple(moved)


def half(a_vals, g, idx, axis, sign) -> float:
    """Half-grid coefficient (a_i + a_{i + sign e_axis}) / 2."""
    return 0.5 * (a_vals[flat(g, idx)] + a_vals[flat(g, wrap(g, idx, axis, sign))])


def dense_La(a: Field) -> np.ndarray:
    """Entry-by-entry dense assembly of the conductivity stencil."""
    g = a.grid
    av = a.values
    size = g.size
    mat = np.zeros((size, size))
    inv_h2 = float(g.n) ** 2
    for idx in all_indices(g):
        row = flat(g, idx)
        for k in range(g.d):
            ap = half(av, g, idx, k, +1)
            am = half(av, g, idx, k, -1)
            mat[row, flat(g, wrap(g, idx, k, +1))] += -ap * inv_h2
            mat[row, row] += (ap + am) * inv_h2
            mat[row, flat(g, wrap(g, idx, k, -1))] += -am * inv_h2
    return mat


def dense_ba(a: Field, xi) -> np.ndarray:
    """Direct summation of the cell-problem right-hand side."""
    g = a.grid
    av = a.values
    out = np.zeros(g.size)
    inv_h = float(g.n)
    for idx in all_indices(g):
        row = flat(g, idx)
        for k in range(g.d):
            out[row] += xi[k] * (half(av, g, idx, k, +1) - half(av, g, idx, k, -1)) * inv_h
    return out


def dense_laplacian_oracle(g: GridSpec) -> np.ndarray:
    return dense_La(Field(np.ones(g.size), g))


def dense_energy(u: Field, a: Field, xi) -> float:
    """Quadratic form (h^d/2)(u^T L_a u - 2 u^T b_a + a^T 1) via dense pieces."""
    la = dense_La(a)
    ba = dense_ba(a, xi)
    g = u.grid
    uv = u.values
    return 0.5 * g.cell_volume * (uv @ la @ uv - 2.0 * uv @ ba + a.values.sum())


def dense_cell_solve(a: Field, xi) -> np.ndarray:
    """Minimum-norm least-squares solve of L_a u = b_a (mean-zero by range)."""
    la = dense_La(a)
    ba = dense_ba(a, xi)
    u, *_ = np.linalg.lstsq(la, ba, rcond=None)
    return u - u.mean()


def central_diff_grad(fn, x0: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of a flat vector."""
    x0 = np.asarray(x0, dtype=np.float64)
    out = np.zeros_like(x0)
    for i in range(x0.size):
        xp = x0.copy()
        xp[i] += step
        xm = x0.copy()
        xm[i] -= step
        out[i] = (fn(xp) - fn(xm)) / (2.0 * step)
    return out


def projected_gradient_ground_state(a: Field, s: float, max_iter: int = 400000,
                                    grad_tol: float = 1e-11):
    """Independent NLSE oracle: projected gradient descent on the
    constrained quartic energy, returning (u normalized, E0 estimate)."""
    from pdesurrogate.nlse import dense_laplacian

    g = a.grid
    lap = dense_laplacian(g)
    av = a.values
    nd = g.size
    u = np.ones(nd)  # already on the sphere |u|^2 = n^d
    lip = 2.0 * (np.linalg.eigvalsh(lap)[-1] + av.max()) + 6.0 * s * 4.0
    eta = 1.0 / lip
    for _ in range(max_iter):
        grad = 2.0 * (lap @ u + av * u + s * u**3)
        tangent = grad - (grad @ u) / (u @ u) * u
        if np.linalg.norm(tangent) <= grad_tol:
            break
        u = u - eta * grad
        u *= np.sqrt(nd) / np.linalg.norm(u)
    e0 = g.cell_volume * (u @ (lap @ u) + np.sum(av * u * u) + s * np.sum(u**4))
    return u, float(e0)


def random_field(g: GridSpec, rng, low=0.3, high=3.0) -> Field:
    return Field(rng.uniform(low, high, g.size), g)
