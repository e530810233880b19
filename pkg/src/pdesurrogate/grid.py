"""Periodic finite-difference grid, stencil operators and the discrete energy.

Fields live on a uniform periodic grid over the unit cell [0,1)^d with n
points per axis and spacing h = 1/n.  A field is stored as a flat vector of
length n^d in row-major multi-index order (last axis fastest); operators are
applied matrix-free by rolling the reshaped array along each axis.

Coefficient values at half-grid points are the average of the two adjacent
nodal values.  The conductivity stencil, its right-hand side and the plain
Laplacian are

    (L_a u)_i = sum_k [ -a_{i+e_k/2} u_{i+e_k} + (a_{i-e_k/2}+a_{i+e_k/2}) u_i
                        - a_{i-e_k/2} u_{i-e_k} ] / h^2
    (b_a)_i   = sum_k xi_k (a_{i+e_k/2} - a_{i-e_k/2}) / h
    (L u)_i   = sum_k ( -u_{i+e_k} + 2 u_i - u_{i-e_k} ) / h^2

and the energy whose minimum (times two) is the effective conductance is

    E(u; a) = (h^d / 2) (u^T L_a u - 2 u^T b_a + a^T 1).

The h^d prefactor lives here: ``energy_gradient`` returns the true gradient
h^d (L_a u - b_a).  Step sizes quoted against the un-scaled iteration
u^{m+1} = u^m - dt (L_a u - b_a) must be divided by h^d before being used
with this gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatch


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic grid: dimension d, n points per axis, spacing h = 1/n."""

    d: int
    n: int

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"dimension must be >= 1, got {self.d}")
        if self.n < 2:
            raise ValueError(f"points per axis must be >= 2, got {self.n}")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def size(self) -> int:
        return self.n**self.d

    @property
    def cell_volume(self) -> float:
        """h^d, the quadrature weight of one grid point."""
        return self.h**self.d


@dataclass
class Field:
    """Real vector of length n^d in row-major multi-index order on ``grid``."""

    values: np.ndarray
    grid: GridSpec

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if self.values.size != self.grid.size:
            raise GridMismatch(
                f"field has {self.values.size} values, grid holds {self.grid.size}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite values")

    def reshaped(self) -> np.ndarray:
        """View of the values as an n x ... x n array."""
        return self.values.reshape(self.grid.shape)

    def copy(self) -> "Field":
        return Field(self.values.copy(), self.grid)


def constant_field(grid: GridSpec, value: float) -> Field:
    return Field(np.full(grid.size, float(value)), grid)


@dataclass(frozen=True)
class Direction:
    """Unit vector xi fixing the direction of the imposed gradient."""

    xi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "xi", np.asarray(self.xi, dtype=np.float64).reshape(-1))
        norm = float(np.linalg.norm(self.xi))
        if abs(norm - 1.0) > 1e-12:
            raise ValueError(f"direction must be unit norm, got |xi| = {norm}")


def axis_direction(d: int, axis: int = 0) -> Direction:
    """Canonical basis vector e_{axis+1} in R^d."""
    xi = np.zeros(d)
    xi[axis] = 1.0
    return Direction(xi)


@dataclass(frozen=True)
class CoefficientBounds:
    """Ellipticity bounds 0 < lambda0 <= a_i <= lambda1."""

    lambda0: float
    lambda1: float

    def __post_init__(self):
        if not (0.0 < self.lambda0 <= self.lambda1):
            raise ValueError(
                f"need 0 < lambda0 <= lambda1, got ({self.lambda0}, {self.lambda1})"
            )

    def contains(self, a: Field) -> bool:
        return bool(
            np.all(a.values >= self.lambda0) and np.all(a.values <= self.lambda1)
        )


def _check_same_grid(x: Field, y: Field):
    if x.grid != y.grid:
        raise GridMismatch(f"grids differ: {x.grid} vs {y.grid}")


def periodic_shift(i, delta, g: GridSpec) -> tuple[int, ...]:
    """Shift multi-index ``i`` by ``delta`` with each component wrapped mod n."""
    if len(i) != g.d or len(delta) != g.d:
        raise GridMismatch(f"multi-index length must be {g.d}")
    return tuple((int(ii) + int(dd)) % g.n for ii, dd in zip(i, delta))


def half_grid_coeff(a: Field, i, k: int, side: int) -> float:
    """Coefficient at the half point i +- e_k/2: mean of the two nodal values."""
    if side not in (+1, -1):
        raise ValueError("side must be +1 or -1")
    delta = [0] * a.grid.d
    delta[k] = side
    j = periodic_shift(i, delta, a.grid)
    arr = a.reshaped()
    return 0.5 * (float(arr[tuple(i)]) + float(arr[j]))


def _half_coeffs(a_arr: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Half-grid coefficient arrays (a_{i+e_k/2}, a_{i-e_k/2}) along axis k."""
    a_plus = 0.5 * (a_arr + np.roll(a_arr, -1, axis=k))
    a_minus = 0.5 * (a_arr + np.roll(a_arr, +1, axis=k))
    return a_plus, a_minus


def apply_La(a: Field, u: Field) -> Field:
    """Matrix-free application of the conductivity stencil L_a to u."""
    _check_same_grid(a, u)
    g = a.grid
    a_arr = a.reshaped()
    u_arr = u.reshaped()
    out = np.zeros_like(u_arr)
    inv_h2 = float(g.n) ** 2
    for k in range(g.d):
        a_plus, a_minus = _half_coeffs(a_arr, k)
        u_plus = np.roll(u_arr, -1, axis=k)
        u_minus = np.roll(u_arr, +1, axis=k)
        out += (-a_plus * u_plus + (a_plus + a_minus) * u_arr - a_minus * u_minus) * inv_h2
    return Field(out.reshape(-1), g)


def assemble_ba(a: Field, xi: Direction) -> Field:
    """Right-hand side b_a of the cell problem; sums to zero by periodicity."""
    g = a.grid
    if xi.xi.size != g.d:
        raise GridMismatch(f"direction has {xi.xi.size} components, grid is {g.d}-d")
    a_arr = a.reshaped()
    out = np.zeros_like(a_arr)
    inv_h = float(g.n)
    for k in range(g.d):
        a_plus, a_minus = _half_coeffs(a_arr, k)
        out += xi.xi[k] * (a_plus - a_minus) * inv_h
    return Field(out.reshape(-1), g)


def apply_laplacian(u: Field) -> Field:
    """Periodic discrete Laplacian L (the a == 1 stencil)."""
    g = u.grid
    u_arr = u.reshaped()
    out = np.zeros_like(u_arr)
    inv_h2 = float(g.n) ** 2
    for k in range(g.d):
        out += (2.0 * u_arr - np.roll(u_arr, -1, axis=k) - np.roll(u_arr, +1, axis=k)) * inv_h2
    return Field(out.reshape(-1), g)


def energy(u: Field, a: Field, xi: Direction | None = None) -> float:
    """Discrete energy E(u; a) = (h^d/2)(u^T L_a u - 2 u^T b_a + a^T 1).

    ``xi`` defaults to e_1, the convention used by every experiment here.
    """
    _check_same_grid(u, a)
    g = u.grid
    if xi is None:
        xi = axis_direction(g.d, 0)
    lau = apply_La(a, u).values
    ba = assemble_ba(a, xi).values
    quad = float(u.values @ lau) - 2.0 * float(u.values @ ba) + float(np.sum(a.values))
    return 0.5 * g.cell_volume * quad


def energy_gradient(u: Field, a: Field, xi: Direction | None = None) -> Field:
    """True gradient of ``energy``: h^d (L_a u - b_a)."""
    _check_same_grid(u, a)
    g = u.grid
    if xi is None:
        xi = axis_direction(g.d, 0)
    lau = apply_La(a, u).values
    ba = assemble_ba(a, xi).values
    return Field(g.cell_volume * (lau - ba), g)
