"""Numerical verification of the noisy-gradient-descent representability argument.

The iteration modeled is

    v^0 = 0,  u^{m+1} = v^m - dt (L_a v^m - b_a),  v^{m+1} = u^{m+1} + dt e^{m+1}

with mean-zero noise bounded by ||e^{m+1}|| <= c ||L_a v^m - b_a||.  Step
sizes here are quoted against that un-scaled form, matching the spectral
constants of L_a; internally the update uses the true energy gradient
h^d (L_a v - b_a), i.e. an effective step dt / h^d.  With

    lambda_a' = (1 + c^2/(1-c)) lambda_a,
    delta     = (1 - 1/(2(1-c))) * 2 / lambda_a'

every step with dt <= delta must satisfy the sufficient-descent inequality

    E(v^{m+1}) - E(v^m) <= -(dt / (2 h^d)) ||grad E(v^m)||^2

(the right-hand side written in true-gradient units), and the energy gap to
the exact minimizer decays like O(1/M).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .elliptic import solve_cell_problem
from .errors import InvalidNoiseLevel
from .grid import Field, GridSpec, apply_La, energy, energy_gradient
from .iterative import (
    inverse_power_iteration,
    power_iteration,
    project_mean_zero,
)

NOISE_MODES = ("worst_case_scaled", "uniform_scaled", "zero")


def keyed_rng(*parts: int) -> np.random.Generator:
    """Counter-based generator keyed by an arbitrary tuple of integers."""
    seq = np.random.SeedSequence([int(p) for p in parts])
    return np.random.Generator(np.random.Philox(seed=seq))


@dataclass(frozen=True)
class NoisyGdConfig:
    c: float
    dt: float
    M: int
    noise_mode: str = "worst_case_scaled"

    def __post_init__(self):
        if not 0.0 <= self.c < 1.0:
            raise InvalidNoiseLevel(f"relative noise level must be in [0, 1), got {self.c}")
        if self.dt <= 0.0 or self.M < 0:
            raise ValueError("need dt > 0 and M >= 0")
        if self.noise_mode not in NOISE_MODES:
            raise ValueError(f"noise_mode must be one of {NOISE_MODES}")


@dataclass
class Trajectory:
    """Per-step iterates v^m with energies and true-gradient norms."""

    vs: np.ndarray  # (M+1, n^d)
    energies: np.ndarray  # (M+1,)
    grad_norms: np.ndarray  # (M+1,), norms of h^d (L_a v - b_a)
    dt_true: float  # config.dt / h^d, the step applied to the true gradient

    def descent_slack(self) -> np.ndarray:
        """E(v^{m+1}) - E(v^m) + (dt_true/2) ||grad E(v^m)||^2, per step.

        Nonpositive (up to rounding) whenever the step-size condition holds.
        """
        return np.diff(self.energies) + 0.5 * self.dt_true * self.grad_norms[:-1] ** 2


@dataclass
class SpectralConstants:
    lambda_a: float  # ||L_a||_2
    mu_a: float  # smallest nonzero eigenvalue of L_a
    lambda_a_prime: float  # (1 + c^2/(1-c)) lambda_a


def spectral_constants(a: Field, c: float = 0.0, tol: float = 1e-8) -> SpectralConstants:
    """Extremal nonzero eigenvalues of L_a by (inverse) power iteration."""
    if not 0.0 <= c < 1.0:
        raise InvalidNoiseLevel(f"relative noise level must be in [0, 1), got {c}")
    g = a.grid

    def op(x: np.ndarray) -> np.ndarray:
        return apply_La(a, Field(x, g)).values

    lam, _, _ = power_iteration(op, g.size, tol=tol, max_iter=100 * g.size)
    mu, _, _ = inverse_power_iteration(
        op, g.size, tol=tol, max_iter=100 * g.size, project=project_mean_zero
    )
    return SpectralConstants(
        lambda_a=lam, mu_a=mu, lambda_a_prime=(1.0 + c**2 / (1.0 - c)) * lam
    )


def max_step(c: float, lambda_a: float) -> float:
    """Largest step size delta with a descent guarantee at noise level c."""
    if not 0.0 <= c < 0.5:
        raise InvalidNoiseLevel(
            f"descent bound needs c < 1/2 for a positive step, got {c}"
        )
    lambda_prime = (1.0 + c**2 / (1.0 - c)) * lambda_a
    return (1.0 - 1.0 / (2.0 * (1.0 - c))) * 2.0 / lambda_prime


def _draw_noise(rng: np.random.Generator, size: int, target_norm: float) -> np.ndarray:
    """Mean-zero Gaussian direction rescaled to the requested norm."""
    if target_norm == 0.0:
        return np.zeros(size)
    eps = project_mean_zero(rng.standard_normal(size))
    norm = np.linalg.norm(eps)
    if norm == 0.0:
        return np.zeros(size)
    return eps * (target_norm / norm)


def noisy_gd(a: Field, config: NoisyGdConfig, rng: np.random.Generator) -> Trajectory:
    """Run the noisy steepest-descent iteration from v^0 = 0."""
    g = a.grid
    hd = g.cell_volume
    dt_true = config.dt / hd
    v = np.zeros(g.size)
    vs = np.empty((config.M + 1, g.size))
    energies = np.empty(config.M + 1)
    grad_norms = np.empty(config.M + 1)
    for m in range(config.M):
        vf = Field(v, g)
        grad = energy_gradient(vf, a).values
        gnorm = float(np.linalg.norm(grad))
        vs[m] = v
        energies[m] = energy(vf, a)
        grad_norms[m] = gnorm
        u_next = v - dt_true * grad
        if config.noise_mode == "zero":
            v = u_next
        else:
            bound = config.c * gnorm
            if config.noise_mode == "uniform_scaled":
                bound *= rng.uniform(0.0, 1.0)
            v = u_next + dt_true * _draw_noise(rng, g.size, bound)
    vf = Field(v, g)
    vs[config.M] = v
    energies[config.M] = energy(vf, a)
    grad_norms[config.M] = float(np.linalg.norm(energy_gradient(vf, a).values))
    return Trajectory(vs=vs, energies=energies, grad_norms=grad_norms, dt_true=dt_true)


@dataclass
class ConvergenceReport:
    m_values: np.ndarray
    gaps: np.ndarray
    slope: float  # log-log fit of gap vs M over the resolvable range
    c_fit: float  # max over sampled M of M * gap(M)
    e_star: float
    e_start: float


def verify_convergence_rate(
    a: Field,
    config: NoisyGdConfig,
    rng: np.random.Generator,
    m_values=None,
    reference_tol: float = 1e-12,
) -> ConvergenceReport:
    """Energy gap to the exact minimizer sampled at the requested M values.

    One trajectory of max(m_values) steps is run; gap(M) = E(v^M) - E(u*)
    with u* from the elliptic solver at ``reference_tol``.
    """
    if m_values is None:
        m_values = [2**k for k in range(4, 13)]
    m_values = np.asarray(sorted(int(m) for m in m_values))
    report = solve_cell_problem(a, tol=reference_tol)
    e_star = energy(report.u, a)
    traj = noisy_gd(
        a,
        NoisyGdConfig(c=config.c, dt=config.dt, M=int(m_values[-1]),
                      noise_mode=config.noise_mode),
        rng,
    )
    gaps = traj.energies[m_values] - e_star
    # fit only where the gap is resolvable above solver/rounding noise
    floor = max(1e-13 * max(abs(traj.energies[0] - e_star), 1.0), 1e-300)
    mask = gaps > floor
    if mask.sum() >= 2:
        slope = float(np.polyfit(np.log(m_values[mask]), np.log(gaps[mask]), 1)[0])
    else:
        slope = -np.inf
    c_fit = float(np.max(m_values * np.maximum(gaps, 0.0)))
    return ConvergenceReport(
        m_values=m_values, gaps=gaps, slope=slope, c_fit=c_fit,
        e_star=e_star, e_start=float(traj.energies[0]),
    )


@dataclass
class TrialRecord:
    trial: int
    n: int
    c: float
    dt: float
    delta: float
    steps: int
    descent_violations: int
    max_slack: float
    mean_zero_max: float
    gap_final: float


def run_verification(
    grid_d: int,
    grid_n: int,
    low: float,
    high: float,
    c_values,
    trials: int,
    seed: int,
    steps: int = 256,
    dt_safety: float = 0.9,
    noise_mode: str = "worst_case_scaled",
    m_values=None,
    slack_tol: float = 1e-12,
) -> tuple[list[TrialRecord], list[dict]]:
    """Descent-lemma and convergence-rate sweep over random coefficient fields.

    Returns per-trial records plus long-format gap rows
    {trial, c, M, gap, c_fit, slope}.
    """
    g = GridSpec(d=grid_d, n=grid_n)
    records: list[TrialRecord] = []
    gap_rows: list[dict] = []
    trial_id = 0
    for c in c_values:
        for k in range(trials):
            a = Field(keyed_rng(seed, trial_id, 0).uniform(low, high, g.size), g)
            consts = spectral_constants(a, c)
            delta = max_step(c, consts.lambda_a)
            dt = dt_safety * delta
            traj = noisy_gd(a, NoisyGdConfig(c=c, dt=dt, M=steps, noise_mode=noise_mode),
                            keyed_rng(seed, trial_id, 1))
            slack = traj.descent_slack()
            means = np.abs(traj.vs.mean(axis=1))
            conv = verify_convergence_rate(
                a, NoisyGdConfig(c=c, dt=dt, M=steps, noise_mode=noise_mode),
                keyed_rng(seed, trial_id, 2),
                m_values=m_values,
            )
            records.append(TrialRecord(
                trial=trial_id, n=grid_n, c=c, dt=dt, delta=delta, steps=steps,
                descent_violations=int(np.sum(slack > slack_tol)),
                max_slack=float(slack.max()),
                mean_zero_max=float(means.max()),
                gap_final=float(conv.gaps[-1]),
            ))
            for m, gap in zip(conv.m_values, conv.gaps):
                gap_rows.append({"trial": trial_id, "c": c, "M": int(m),
                                 "gap": float(gap), "c_fit": conv.c_fit,
                                 "slope": conv.slope})
            trial_id += 1
    return records, gap_rows


def write_report_csv(path, records: list[TrialRecord], gap_rows: list[dict]) -> None:
    """Trial summaries followed by the gap(M) table, one CSV."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["section", "trial", "n", "c", "dt", "delta", "steps",
                         "descent_violations", "max_slack", "mean_zero_max", "gap_final"])
        for r in records:
            writer.writerow(["trial", r.trial, r.n, f"{r.c:.6g}", f"{r.dt:.12g}",
                             f"{r.delta:.12g}", r.steps, r.descent_violations,
                             f"{r.max_slack:.6e}", f"{r.mean_zero_max:.6e}",
                             f"{r.gap_final:.6e}"])
        writer.writerow(["section", "trial", "c", "M", "gap", "c_fit", "slope",
                         "", "", "", ""])
        for row in gap_rows:
            writer.writerow(["gap", row["trial"], f"{row['c']:.6g}", row["M"],
                             f"{row['gap']:.12e}", f"{row['c_fit']:.6e}",
                             f"{row['slope']:.4f}", "", "", "", ""])
