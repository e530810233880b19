"""Ground-truth PDE solvers and a from-scratch convolutional surrogate.

Two periodic parametric problems are covered: the effective conductance of
an inhomogeneous elliptic equation and the ground-state energy of a
defocusing cubic Schroedinger equation.  The package generates labeled
datasets for both, trains translation-invariant convolutional surrogates on
them, and numerically verifies the noisy-gradient-descent convergence
argument that motivates the architecture.
"""

from .grid import (
    CoefficientBounds,
    Direction,
    Field,
    GridSpec,
    apply_La,
    apply_laplacian,
    assemble_ba,
    axis_direction,
    constant_field,
    energy,
    energy_gradient,
    half_grid_coeff,
    periodic_shift,
)
from .elliptic import (
    EllipticSolveReport,
    effective_conductance,
    half_grid_harmonic_mean_1d,
    harmonic_mean_1d,
    solve_cell_problem,
)
from .nlse import (
    NlseState,
    ground_state_homotopy,
    linear_ground_state,
    newton_correct,
    nlse_residual,
)
from .sampler import (
    Dataset,
    SamplingSpec,
    Task,
    WhitenStats,
    apply_whitening,
    compute_whiten_stats,
    generate_dataset,
    load_dataset,
    sample_field,
    save_dataset,
    unapply_whitening,
)
from .nn import (
    NetworkSpec,
    Params,
    build_1d_three_stage_arch,
    build_single_conv_arch,
    extract_stage1_response,
    forward,
    backward,
    load_checkpoint,
    param_count,
    predict,
    save_checkpoint,
)
from .train import (
    TrainConfig,
    TrainHistory,
    init_params,
    mse_loss,
    nadam_step,
    relative_error,
    train,
)
from .theory import (
    NoisyGdConfig,
    SpectralConstants,
    Trajectory,
    max_step,
    noisy_gd,
    spectral_constants,
    verify_convergence_rate,
)

__all__ = [
    "CoefficientBounds", "Dataset", "Direction", "EllipticSolveReport",
    "Field", "GridSpec", "NetworkSpec", "NlseState", "NoisyGdConfig",
    "Params", "SamplingSpec", "SpectralConstants", "Task", "TrainConfig",
    "TrainHistory", "Trajectory", "WhitenStats",
    "apply_La", "apply_laplacian", "apply_whitening", "assemble_ba",
    "axis_direction", "backward", "build_1d_three_stage_arch",
    "build_single_conv_arch", "compute_whiten_stats", "constant_field",
    "effective_conductance", "energy", "energy_gradient",
    "extract_stage1_response", "forward", "generate_dataset",
    "ground_state_homotopy", "half_grid_coeff", "half_grid_harmonic_mean_1d",
    "harmonic_mean_1d", "init_params", "linear_ground_state",
    "load_checkpoint", "load_dataset", "max_step", "mse_loss", "nadam_step",
    "newton_correct", "nlse_residual", "noisy_gd", "param_count",
    "periodic_shift", "predict", "relative_error", "sample_field",
    "save_checkpoint", "save_dataset", "solve_cell_problem",
    "spectral_constants", "train", "unapply_whitening",
    "verify_convergence_rate",
]

__version__ = "0.1.0"
