"""Coefficient-field sampling, dataset generation and the PSD1 file format.

Sampling is counter-based: the entries of sample ``index`` come from a
Philox stream keyed by (seed, index), so a dataset is bit-identical no
matter how many workers computed it or in which order.  Labels are the
discrete solver outputs (effective conductance or NLSE ground-state
energy); the one closed-form alternative is the nodal harmonic mean used
by the 1D reciprocal-structure experiment (``label_kind``).

PSD1 layout (little-endian):
    magic "PDESURD1" | u32 version=1 | u32 task (1 elliptic, 2 nlse)
    | u32 d | u32 n | u64 count | f64 low | f64 high | u64 seed | f64 tol
    | count * (n^d f64 inputs, f64 target)            row-major multi-index
    | u8 whitening flag | [n^d f64 means, n^d f64 stds]
A JSON sidecar mirrors the metadata for human inspection; the binary file
is authoritative.
"""

from __future__ import annotations

import enum
import json
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import elliptic, nlse
from .errors import GenerationFailed, ZeroVariance
from .grid import Field, GridSpec

MAGIC = b"PDESURD1"
FORMAT_VERSION = 1


class Task(enum.Enum):
    ELLIPTIC_CONDUCTANCE = 1
    NLSE_GROUND_STATE = 2

    @classmethod
    def from_name(cls, name: str) -> "Task":
        return {"elliptic": cls.ELLIPTIC_CONDUCTANCE, "nlse": cls.NLSE_GROUND_STATE}[name]

    @property
    def short_name(self) -> str:
        return "elliptic" if self is Task.ELLIPTIC_CONDUCTANCE else "nlse"


@dataclass(frozen=True)
class SamplingSpec:
    """What to sample and how to label it.

    ``label_kind`` is "solver" (discrete PDE solve) except for the 1D
    elliptic closed-form experiment, which uses "harmonic_mean_1d": the
    nodal harmonic mean is the quantity the three-stage network mirrors,
    and a network of that shape cannot represent the half-grid solver
    labels below a few percent.
    """

    task: Task
    grid: GridSpec
    low: float
    high: float
    count: int
    seed: int
    solver_tol: float = 1e-10
    sigma: float = 2.0
    homotopy_step: float = 0.4
    label_kind: str = "solver"

    def __post_init__(self):
        # low == high is tolerated as a degenerate constant-field spec
        if self.low > self.high:
            raise ValueError(f"need low <= high, got [{self.low}, {self.high}]")
        if self.task is Task.ELLIPTIC_CONDUCTANCE and self.low <= 0.0:
            raise ValueError("elliptic coefficients must stay positive: low > 0")
        if self.count <= 0:
            raise ValueError("count must be positive")
        if self.label_kind not in ("solver", "harmonic_mean_1d"):
            raise ValueError(f"unknown label_kind {self.label_kind!r}")
        if self.label_kind == "harmonic_mean_1d" and (
            self.task is not Task.ELLIPTIC_CONDUCTANCE or self.grid.d != 1
        ):
            raise ValueError("harmonic_mean_1d labels need the 1D elliptic task")


@dataclass
class WhitenStats:
    """Per-dimension training-set mean and (population) standard deviation."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        self.std = np.asarray(self.std, dtype=np.float64).reshape(-1)
        if self.mean.shape != self.std.shape:
            raise ValueError("mean and std must have the same length")
        if np.any(self.std <= 0.0):
            raise ZeroVariance("whitening std must be positive in every dimension")


@dataclass
class Dataset:
    """Sampled inputs with solver labels and provenance."""

    spec: SamplingSpec
    inputs: np.ndarray  # (count, n^d)
    targets: np.ndarray  # (count,)
    solver_metadata: dict = field(default_factory=dict)
    whiten: WhitenStats | None = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64).reshape(-1)
        if self.inputs.shape != (self.spec.count, self.spec.grid.size):
            raise ValueError(
                f"inputs shape {self.inputs.shape} does not match spec "
                f"({self.spec.count}, {self.spec.grid.size})"
            )
        if self.targets.shape[0] != self.spec.count:
            raise ValueError("one target per sample required")

    def field(self, index: int) -> Field:
        return Field(self.inputs[index].copy(), self.spec.grid)


def sample_field(spec: SamplingSpec, index: int) -> Field:
    """I.i.d. uniform field for sample ``index``; depends only on (seed, index)."""
    if not 0 <= index < spec.count:
        raise IndexError(f"sample index {index} outside [0, {spec.count})")
    gen = np.random.Generator(np.random.Philox(key=[spec.seed, index]))
    values = gen.uniform(spec.low, spec.high, spec.grid.size)
    return Field(values, spec.grid)


def solve_label(spec: SamplingSpec, a: Field) -> float:
    """Ground-truth scalar for one coefficient field."""
    if spec.label_kind == "harmonic_mean_1d":
        return elliptic.harmonic_mean_1d(a)
    if spec.task is Task.ELLIPTIC_CONDUCTANCE:
        return elliptic.effective_conductance(a, tol=spec.solver_tol)
    return nlse.ground_state_homotopy(
        a, sigma=spec.sigma, step=spec.homotopy_step, tol=spec.solver_tol
    ).e0


def _solve_one(args: tuple[SamplingSpec, int]):
    spec, index = args
    a = sample_field(spec, index)
    try:
        return index, a.values, solve_label(spec, a), None
    except Exception as exc:  # propagated to the caller with the index
        return index, a.values, np.nan, repr(exc)


def generate_dataset(spec: SamplingSpec, workers: int = 1) -> Dataset:
    """Sample and label ``spec.count`` fields; deterministic for any worker count."""
    inputs = np.empty((spec.count, spec.grid.size))
    targets = np.empty(spec.count)
    failures = []
    jobs = [(spec, i) for i in range(spec.count)]
    if workers <= 1:
        results = map(_solve_one, jobs)
    else:
        pool = ProcessPoolExecutor(max_workers=workers)
        results = pool.map(_solve_one, jobs, chunksize=max(1, spec.count // (8 * workers)))
    for index, values, target, err in results:
        inputs[index] = values
        targets[index] = target
        if err is not None:
            failures.append((index, err))
    if workers > 1:
        pool.shutdown()
    if failures:
        raise GenerationFailed(
            f"{len(failures)} samples failed to solve: "
            + "; ".join(f"[{i}] {e}" for i, e in failures[:5]),
            failed_indices=[i for i, _ in failures],
        )
    metadata = {
        "solver_tol": spec.solver_tol,
        "solver": "cg-mean-zero" if spec.task is Task.ELLIPTIC_CONDUCTANCE
        else "homotopy-newton",
        "solver_version": 1,
        "label_kind": spec.label_kind,
    }
    if spec.task is Task.NLSE_GROUND_STATE:
        metadata["sigma"] = spec.sigma
        metadata["homotopy_step"] = spec.homotopy_step
    return Dataset(spec=spec, inputs=inputs, targets=targets, solver_metadata=metadata)


def compute_whiten_stats(train_inputs: np.ndarray) -> WhitenStats:
    """Population mean/std per input dimension over the training split."""
    x = np.asarray(train_inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need a (samples, dims) matrix with at least 2 samples")
    mean = x.mean(axis=0)
    std = x.std(axis=0)  # ddof=0: whitened variance is exactly 1
    if np.any(std == 0.0):
        bad = np.flatnonzero(std == 0.0)
        raise ZeroVariance(f"dimensions {bad.tolist()} are constant across the training set")
    return WhitenStats(mean=mean, std=std)


def apply_whitening(a: Field, stats: WhitenStats) -> Field:
    return Field((a.values - stats.mean) / stats.std, a.grid)


def unapply_whitening(a: Field, stats: WhitenStats) -> Field:
    return Field(a.values * stats.std + stats.mean, a.grid)


def whiten_matrix(inputs: np.ndarray, stats: WhitenStats) -> np.ndarray:
    return (np.asarray(inputs, dtype=np.float64) - stats.mean) / stats.std


_HEADER = struct.Struct("<8sIIIIQddQd")


def save_dataset(ds: Dataset, path) -> None:
    """Write the PSD1 file and its JSON sidecar (<path>.json)."""
    spec = ds.spec
    header = _HEADER.pack(
        MAGIC, FORMAT_VERSION, spec.task.value, spec.grid.d, spec.grid.n,
        spec.count, spec.low, spec.high, spec.seed, spec.solver_tol,
    )
    records = np.hstack([ds.inputs, ds.targets[:, None]]).astype("<f8")
    parts = [header, records.tobytes()]
    if ds.whiten is not None:
        parts.append(b"\x01")
        parts.append(ds.whiten.mean.astype("<f8").tobytes())
        parts.append(ds.whiten.std.astype("<f8").tobytes())
    else:
        parts.append(b"\x00")
    path = Path(path)
    path.write_bytes(b"".join(parts))
    sidecar = {
        "format": "PSD1",
        "version": FORMAT_VERSION,
        "task": spec.task.short_name,
        "d": spec.grid.d,
        "n": spec.grid.n,
        "count": spec.count,
        "low": spec.low,
        "high": spec.high,
        "seed": spec.seed,
        "solver_tol": spec.solver_tol,
        "label_kind": spec.label_kind,
        "solver_metadata": ds.solver_metadata,
        "whitening_present": ds.whiten is not None,
        "target_mean": float(ds.targets.mean()),
        "target_std": float(ds.targets.std()),
    }
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2))


def load_dataset(path) -> Dataset:
    """Read a PSD1 file back into a Dataset."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size or raw[:8] != MAGIC:
        raise ValueError(f"{path}: not a PSD1 dataset file")
    (_, version, task_code, d, n, count, low, high, seed, tol) = _HEADER.unpack_from(raw)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported PSD1 version {version}")
    spec = SamplingSpec(
        task=Task(task_code), grid=GridSpec(d=d, n=n),
        low=low, high=high, count=count, seed=seed, solver_tol=tol,
    )
    size = spec.grid.size
    offset = _HEADER.size
    rec_len = count * (size + 1)
    records = np.frombuffer(raw, dtype="<f8", count=rec_len, offset=offset)
    records = records.reshape(count, size + 1)
    offset += rec_len * 8
    flag = raw[offset]
    offset += 1
    whiten = None
    if flag == 1:
        mean = np.frombuffer(raw, dtype="<f8", count=size, offset=offset)
        offset += size * 8
        std = np.frombuffer(raw, dtype="<f8", count=size, offset=offset)
        whiten = WhitenStats(mean=mean.copy(), std=std.copy())
    return Dataset(
        spec=spec,
        inputs=records[:, :size].copy(),
        targets=records[:, size].copy(),
        whiten=whiten,
    )
