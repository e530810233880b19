"""Matrix-free iterative kernels: conjugate gradients and power iterations.

All operators are passed as callables on flat numpy vectors.  An optional
``project`` callable restricts the iteration to a subspace (used to pin the
mean-zero subspace of singular periodic operators); it is re-applied every
iteration so rounding cannot drift the iterate into the nullspace.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .errors import NotConverged

Operator = Callable[[np.ndarray], np.ndarray]
Projector = Callable[[np.ndarray], np.ndarray]


def project_mean_zero(x: np.ndarray) -> np.ndarray:
    """Remove the mean component (projection onto the complement of span{1})."""
    return x - x.mean()


def conjugate_gradient(
    apply_op: Operator,
    b: np.ndarray,
    tol: float,
    max_iter: int,
    x0: Optional[np.ndarray] = None,
    project: Optional[Projector] = None,
) -> tuple[np.ndarray, int, float]:
    """Solve ``A x = b`` for SPD ``A`` (possibly SPD only on a subspace).

    Stops when the true residual satisfies ||A x - b|| <= tol * ||b||.
    Returns (x, iterations, final residual norm).  Raises NotConverged with
    the best iterate attached if max_iter is exhausted.
    """
    b = np.asarray(b, dtype=np.float64)
    if project is not None:
        b = project(b)
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return np.zeros_like(b), 0, 0.0
    target = tol * b_norm

    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=np.float64)
    if project is not None:
        x = project(x)
    r = b - apply_op(x)
    if project is not None:
        r = project(r)
    p = r.copy()
    rs = float(r @ r)
    iterations = 0

    while iterations < max_iter:
        if np.sqrt(rs) <= target:
            # recurrence residual converged; accept only if the true one did
            r_true = b - apply_op(x)
            if project is not None:
                r_true = project(r_true)
            true_norm = float(np.linalg.norm(r_true))
            if true_norm <= target:
                return x, iterations, true_norm
            r = r_true
            p = r.copy()
            rs = float(r @ r)
        ap = apply_op(p)
        if project is not None:
            ap = project(ap)
        denom = float(p @ ap)
        if denom <= 0.0:
            # loss of positive definiteness on the working subspace
            break
        alpha = rs / denom
        x += alpha * p
        r -= alpha * ap
        if project is not None:
            x = project(x)
            r = project(r)
        rs_new = float(r @ r)
        p = r + (rs_new / rs) * p
        rs = rs_new
        iterations += 1

    r_true = b - apply_op(x)
    if project is not None:
        r_true = project(r_true)
    true_norm = float(np.linalg.norm(r_true))
    if true_norm <= target:
        return x, iterations, true_norm
    raise NotConverged(
        f"CG: residual {true_norm:.3e} above target {target:.3e} after {iterations} iterations",
        best=x,
        residual_norm=true_norm,
    )


def _fixed_start(size: int) -> np.ndarray:
    """Deterministic pseudo-random start vector (same bits on every call)."""
    gen = np.random.Generator(np.random.Philox(key=0x9E3779B97F4A7C15))
    return gen.standard_normal(size)


_STABILITY_FRACTION = 1e-3  # value-stability threshold relative to tol
_STABILITY_RUNS = 3


def power_iteration(
    apply_op: Operator,
    size: int,
    tol: float,
    max_iter: int,
    start: Optional[np.ndarray] = None,
) -> tuple[float, np.ndarray, int]:
    """Largest eigenpair of a symmetric PSD operator.

    Converged when ||A v - lam v|| <= tol * |lam|, or when the Rayleigh
    quotient stops moving (several consecutive changes below a small
    fraction of tol * |lam|).  The latter handles near-degenerate extremal
    pairs, where the eigenVALUE settles long before the vector does and any
    Rayleigh quotient inside the mixing cone is accurate to the pair's gap.
    """
    v = _fixed_start(size) if start is None else np.array(start, dtype=np.float64)
    v /= np.linalg.norm(v)
    lam = 0.0
    lam_prev = np.inf
    stable = 0
    for it in range(1, max_iter + 1):
        w = apply_op(v)
        lam = float(v @ w)
        resid = float(np.linalg.norm(w - lam * v))
        if resid <= tol * max(abs(lam), np.finfo(float).tiny):
            return lam, v, it
        if abs(lam - lam_prev) <= _STABILITY_FRACTION * tol * max(abs(lam), 1e-300):
            stable += 1
            if stable >= _STABILITY_RUNS:
                return lam, v, it
        else:
            stable = 0
        lam_prev = lam
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            return 0.0, v, it
        v = w / norm
    raise NotConverged(
        f"power iteration: no convergence in {max_iter} iterations (lam={lam:.6e})",
        best=(lam, v),
    )


def inverse_power_iteration(
    apply_op: Operator,
    size: int,
    tol: float,
    max_iter: int,
    cg_tol: float = 1e-13,
    cg_max_iter: Optional[int] = None,
    project: Optional[Projector] = None,
    start: Optional[np.ndarray] = None,
    block: int = 3,
) -> tuple[float, np.ndarray, int]:
    """Smallest eigenpair of an SPD operator (SPD on ``project``'s range).

    Runs a small block of inverse-power vectors with a Rayleigh-Ritz
    extraction each sweep: a single vector converges at the ratio of the
    two smallest eigenvalues, which on rough coefficient fields can be
    arbitrarily close to 1, while the block converges at the much friendlier
    ratio to the first eigenvalue outside the block.  Each solve A w = v
    uses conjugate gradients.  Converged when ||A v - lam v|| <= tol * |lam|
    for the smallest Ritz pair.
    """
    if block > 1:
        return _block_inverse_power(
            apply_op, size, tol, max_iter, cg_tol, cg_max_iter, project, block
        )
    if cg_max_iter is None:
        cg_max_iter = 20 * size
    v = _fixed_start(size) if start is None else np.array(start, dtype=np.float64)
    if project is not None:
        v = project(v)
    v /= np.linalg.norm(v)
    lam = 0.0
    lam_prev = np.inf
    stable = 0
    for it in range(1, max_iter + 1):
        av = apply_op(v)
        if project is not None:
            av = project(av)
        lam = float(v @ av)
        resid = float(np.linalg.norm(av - lam * v))
        if resid <= tol * max(abs(lam), np.finfo(float).tiny):
            return lam, v, it
        # value-stability exit for near-degenerate smallest pairs (see
        # power_iteration); the value is then accurate to ~the pair's gap
        if abs(lam - lam_prev) <= _STABILITY_FRACTION * tol * max(abs(lam), 1e-300):
            stable += 1
            if stable >= _STABILITY_RUNS:
                return lam, v, it
        else:
            stable = 0
        lam_prev = lam
        w, _, _ = conjugate_gradient(
            apply_op, v, tol=cg_tol, max_iter=cg_max_iter, x0=v / lam if lam > 0 else None,
            project=project,
        )
        if project is not None:
            w = project(w)
        v = w / np.linalg.norm(w)
    raise NotConverged(
        f"inverse power iteration: no convergence in {max_iter} iterations (lam={lam:.6e})",
        best=(lam, v),
    )


def _block_inverse_power(apply_op, size, tol, max_iter, cg_tol, cg_max_iter,
                         project, block):
    if cg_max_iter is None:
        cg_max_iter = 20 * size
    block = max(1, min(block, size - 1 if project is not None else size))
    gen = np.random.Generator(np.random.Philox(key=0x5DEECE66D))
    vs = gen.standard_normal((size, block))
    if project is not None:
        vs = np.column_stack([project(vs[:, j]) for j in range(block)])
    vs, _ = np.linalg.qr(vs)
    lam = np.inf
    vec = vs[:, 0]
    for it in range(1, max_iter + 1):
        avs = np.column_stack([apply_op(vs[:, j]) for j in range(block)])
        if project is not None:
            avs = np.column_stack([project(avs[:, j]) for j in range(block)])
        ritz = vs.T @ avs
        ritz = 0.5 * (ritz + ritz.T)
        evals, rot = np.linalg.eigh(ritz)
        lam = float(evals[0])
        vec = vs @ rot[:, 0]
        resid = float(np.linalg.norm(avs @ rot[:, 0] - lam * vec))
        if resid <= tol * max(abs(lam), np.finfo(float).tiny):
            return lam, vec, it
        ws = np.empty_like(vs)
        for j in range(block):
            w, _, _ = conjugate_gradient(
                apply_op, vs[:, j], tol=cg_tol, max_iter=cg_max_iter,
                x0=vs[:, j] / lam if lam > 0 else None, project=project,
            )
            ws[:, j] = project(w) if project is not None else w
        vs, _ = np.linalg.qr(ws)
        if project is not None:
            vs = np.column_stack([project(vs[:, j]) for j in range(block)])
    raise NotConverged(
        f"block inverse power: no convergence in {max_iter} iterations (lam={lam:.6e})",
        best=(lam, vec),
    )
