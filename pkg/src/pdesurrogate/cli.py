"""Command-line pipeline: generate, solve, train, eval, verify, fit-reciprocal.

Every run is driven by one declarative JSON config; the sha256 of the
canonicalized config is embedded in each artifact so results stay
traceable.  Exit codes: 0 success, 1 config error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import nlse, nn, theory
from .elliptic import effective_conductance
from .errors import ConfigError, PdeSurrogateError
from .grid import Field, GridSpec
from .sampler import (
    Dataset,
    SamplingSpec,
    Task,
    generate_dataset,
    load_dataset,
    save_dataset,
    whiten_matrix,
)
from .train import TrainConfig, relative_error, train


def _load_config(path: str) -> tuple[dict, str]:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    digest = hashlib.sha256(
        json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()[:16]
    return cfg, digest


def _require(cfg: dict, key: str, kind, where: str = "config"):
    if key not in cfg:
        raise ConfigError(f"{where}: missing required key {key!r}")
    value = cfg[key]
    if kind is float:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(f"{where}.{key}: expected a number, got {value!r}")
        return float(value)
    if kind is int:
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{where}.{key}: expected an integer, got {value!r}")
        return value
    if not isinstance(value, kind):
        raise ConfigError(f"{where}.{key}: expected {kind.__name__}, got {value!r}")
    return value


def _grid_from(cfg: dict) -> GridSpec:
    section = _require(cfg, "grid", dict)
    try:
        return GridSpec(d=_require(section, "d", int, "grid"),
                        n=_require(section, "n", int, "grid"))
    except ValueError as exc:
        raise ConfigError(f"grid: {exc}") from exc


def _sampling_spec(cfg: dict, seed_override=None) -> SamplingSpec:
    task_name = _require(cfg, "task", str)
    if task_name not in ("elliptic", "nlse"):
        raise ConfigError(f"task must be 'elliptic' or 'nlse', got {task_name!r}")
    dist = _require(cfg, "distribution", dict)
    gen = _require(cfg, "generate", dict)
    solver = cfg.get("solver", {})
    seed = _require(gen, "seed", int, "generate") if seed_override is None else seed_override
    try:
        return SamplingSpec(
            task=Task.from_name(task_name),
            grid=_grid_from(cfg),
            low=_require(dist, "low", float, "distribution"),
            high=_require(dist, "high", float, "distribution"),
            count=_require(gen, "count", int, "generate"),
            seed=seed,
            solver_tol=float(solver.get("tol", 1e-10)),
            sigma=float(solver.get("sigma", 2.0)),
            homotopy_step=float(solver.get("step", 0.4)),
            label_kind=str(gen.get("label", "solver")),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_generate(cfg: dict, digest: str, workers: int, seed_override=None) -> int:
    spec = _sampling_spec(cfg, seed_override)
    out = Path(_require(_require(cfg, "generate", dict), "out", str, "generate"))
    out.parent.mkdir(parents=True, exist_ok=True)
    ds = generate_dataset(spec, workers=workers)
    ds.solver_metadata["config_hash"] = digest
    save_dataset(ds, out)
    print(f"wrote {spec.count} samples to {out}")
    print(f"target mean = {ds.targets.mean():.6f}  std = {ds.targets.std():.6f}")
    return 0


def _read_field_csv(path: Path) -> Field:
    try:
        try:
            arr = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
        except ValueError:
            arr = np.loadtxt(path, dtype=np.float64, ndmin=2)
    except OSError as exc:
        raise ConfigError(f"cannot read field file {path}: {exc}") from exc
    arr = np.squeeze(arr)
    if arr.ndim <= 1:
        values = np.atleast_1d(arr)
        grid = GridSpec(d=1, n=values.size)
    elif arr.ndim == 2 and arr.shape[0] == arr.shape[1]:
        grid = GridSpec(d=2, n=arr.shape[0])
        values = arr.reshape(-1)
    else:
        raise PdeSurrogateError(
            f"{path}: expected a flat vector (1D) or square matrix (2D), got {arr.shape}"
        )
    return Field(values, grid)


def cmd_solve(args) -> int:
    path = Path(args.input)
    if not path.is_file():
        raise ConfigError(f"input file not found: {path}")
    if path.read_bytes()[:8] == b"PDESURD1":
        ds = load_dataset(path)
        a = ds.field(args.index)
    else:
        a = _read_field_csv(path)
    if args.task == "elliptic":
        value = effective_conductance(a, tol=args.tol)
    else:
        value = nlse.ground_state_homotopy(
            a, sigma=args.sigma, step=args.step, tol=args.tol
        ).e0
    print(repr(value))
    return 0


def _arch_from(section: dict, grid: GridSpec) -> nn.NetworkSpec:
    arch = _require(section, "arch", dict, "train")
    kind = _require(arch, "kind", str, "train.arch")
    if kind == "single_conv":
        return nn.build_single_conv_arch(grid.n, grid.d, _require(arch, "alpha", int, "train.arch"))
    if kind == "three_stage_1d":
        if grid.d != 1:
            raise ConfigError("three_stage_1d architecture needs a 1D grid")
        return nn.build_1d_three_stage_arch(
            grid.n,
            width=int(arch.get("width", 16)),
            stage_depth=int(arch.get("stage_depth", 3)),
        )
    raise ConfigError(f"unknown architecture kind {kind!r}")


def _train_config(section: dict, seed_override=None) -> TrainConfig:
    raw = dict(section.get("config", {}))
    if seed_override is not None:
        raw["seed"] = seed_override
    allowed = {"learning_rate", "batch_size", "epochs", "seed", "beta1", "beta2",
               "eps", "lr_drop_factor", "plateau_patience"}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"train.config: unknown keys {sorted(unknown)}")
    try:
        return TrainConfig(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"train.config: {exc}") from exc


def _load_psd(path_str: str, what: str) -> Dataset:
    path = Path(path_str)
    if not path.is_file():
        raise ConfigError(f"{what} dataset not found: {path}")
    return load_dataset(path)


def cmd_train(cfg: dict, digest: str, seed_override=None) -> int:
    section = _require(cfg, "train", dict)
    train_ds = _load_psd(_require(section, "train_path", str, "train"), "training")
    val_ds = _load_psd(_require(section, "val_path", str, "train"), "validation")
    spec = _arch_from(section, train_ds.spec.grid)
    config = _train_config(section, seed_override)
    params, history, stats = train(train_ds, val_ds, spec, config)

    ckpt_path = Path(_require(section, "checkpoint_out", str, "train"))
    ckpt_path.parent.mkdir(parents=True, exist_ok=True)
    final_train = history.train_relerr[history.best_epoch]
    final_val = history.val_relerr[history.best_epoch]
    nn.save_checkpoint(
        ckpt_path, spec, params, whiten=stats, config_hash=digest,
        extra={
            "train_config": {
                "learning_rate": config.learning_rate, "batch_size": config.batch_size,
                "epochs": config.epochs, "seed": config.seed, "beta1": config.beta1,
                "beta2": config.beta2, "eps": config.eps,
                "lr_drop_factor": config.lr_drop_factor,
                "plateau_patience": config.plateau_patience,
            },
            "best_epoch": history.best_epoch,
            "train_relerr": final_train,
            "val_relerr": final_val,
        },
    )
    metrics_path = Path(_require(section, "metrics_out", str, "train"))
    metrics_path.parent.mkdir(parents=True, exist_ok=True)
    with open(metrics_path, "w", newline="") as fh:
        fh.write(f"# config_hash={digest}\n")
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "train_relerr", "val_relerr", "lr"])
        for row in history.as_rows():
            writer.writerow([row[0], f"{row[1]:.12e}", f"{row[2]:.12e}",
                             f"{row[3]:.12e}", f"{row[4]:.12e}"])
    print(f"wrote checkpoint to {ckpt_path} (best epoch {history.best_epoch})")
    print(f"train relative error = {final_train:.6e}")
    print(f"validation relative error = {final_val:.6e}")
    return 0


def cmd_eval(cfg: dict, digest: str) -> int:
    section = _require(cfg, "eval", dict)
    ckpt = Path(_require(section, "checkpoint", str, "eval"))
    if not ckpt.is_file():
        raise ConfigError(f"checkpoint not found: {ckpt}")
    spec, params, stats, _ = nn.load_checkpoint(ckpt)
    ds = _load_psd(_require(section, "dataset", str, "eval"), "evaluation")
    inputs = ds.inputs if stats is None else whiten_matrix(ds.inputs, stats)
    preds = nn.predict(spec, params, inputs)
    err = relative_error(preds, ds.targets)
    out = section.get("predictions_out")
    if out:
        out_path = Path(out)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        with open(out_path, "w", newline="") as fh:
            fh.write(f"# config_hash={digest}\n")
            writer = csv.writer(fh)
            writer.writerow(["index", "target", "prediction"])
            for i, (t, p) in enumerate(zip(ds.targets, preds)):
                writer.writerow([i, f"{t:.17g}", f"{p:.17g}"])
    print(f"relative error = {err:.12e}")
    return 0


def cmd_verify(cfg: dict, digest: str, seed_override=None) -> int:
    section = _require(cfg, "verify", dict)
    grid = _grid_from(section if "grid" in section else cfg)
    dist = _require(section if "distribution" in section else cfg, "distribution", dict)
    seed = _require(section, "seed", int, "verify") if seed_override is None else seed_override
    records, gap_rows = theory.run_verification(
        grid_d=grid.d,
        grid_n=grid.n,
        low=_require(dist, "low", float, "distribution"),
        high=_require(dist, "high", float, "distribution"),
        c_values=[float(c) for c in _require(section, "c_values", list, "verify")],
        trials=_require(section, "trials", int, "verify"),
        seed=seed,
        steps=int(section.get("steps", 256)),
        dt_safety=float(section.get("dt_safety", 0.9)),
        noise_mode=str(section.get("noise_mode", "worst_case_scaled")),
        m_values=section.get("m_values"),
    )
    out = Path(_require(section, "out", str, "verify"))
    out.parent.mkdir(parents=True, exist_ok=True)
    theory.write_report_csv(out, records, gap_rows)
    violations = sum(r.descent_violations for r in records)
    print(f"wrote {out} ({len(records)} trials)")
    print(f"descent violations = {violations}")
    print(f"max slack = {max(r.max_slack for r in records):.3e}")
    return 0 if violations == 0 else 2


def cmd_fit_reciprocal(cfg: dict, digest: str) -> int:
    section = _require(cfg, "fit_reciprocal", dict)
    ckpt = Path(_require(section, "checkpoint", str, "fit_reciprocal"))
    if not ckpt.is_file():
        raise ConfigError(f"checkpoint not found: {ckpt}")
    spec, params, stats, _ = nn.load_checkpoint(ckpt)
    x_min = float(section.get("x_min", 0.3))
    x_max = float(section.get("x_max", 1.5))
    points = int(section.get("points", 200))
    xs = np.linspace(x_min, x_max, points)
    if stats is None:
        fed = xs
    else:
        fed = (xs - stats.mean.mean()) / stats.std.mean()
    response = nn.extract_stage1_response(spec, params, fed)
    design = np.column_stack([1.0 / xs, np.ones_like(xs)])
    coef, _, _, _ = np.linalg.lstsq(design, response, rcond=None)
    fit = design @ coef
    ss_res = float(np.sum((response - fit) ** 2))
    ss_tot = float(np.sum((response - response.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    out = section.get("out")
    if out:
        out_path = Path(out)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        with open(out_path, "w", newline="") as fh:
            fh.write(f"# config_hash={digest}\n")
            writer = csv.writer(fh)
            writer.writerow(["x", "stage1_response", "reciprocal_fit"])
            for x, r, f in zip(xs, response, fit):
                writer.writerow([f"{x:.12g}", f"{r:.17g}", f"{f:.17g}"])
    print(f"beta1 = {coef[0]:.12g}")
    print(f"beta2 = {coef[1]:.12g}")
    print(f"r_squared = {r2:.12g}")
    return 0


class _Parser(argparse.ArgumentParser):
    # config errors (including bad flags) exit 1, not argparse's default 2
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pdesurrogate",
                     description="PDE surrogate pipeline (datasets, training, verification)")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_cmd(name, help_text, seed=True, workers=False):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to the JSON run config")
        if seed:
            p.add_argument("--seed", type=int, default=None, help="override the config seed")
        if workers:
            p.add_argument("--workers", type=int, default=1,
                           help="parallel workers for sample labeling")
        return p

    add_config_cmd("generate", "sample coefficient fields and label them", workers=True)
    add_config_cmd("train", "train a surrogate on generated datasets")
    add_config_cmd("eval", "evaluate a checkpoint on a dataset", seed=False)
    add_config_cmd("verify", "noisy-gradient-descent verification sweep")
    add_config_cmd("fit-reciprocal", "fit beta1/x + beta2 to a stage-1 response", seed=False)

    solve = sub.add_parser("solve", help="solve one coefficient field and print the scalar")
    solve.add_argument("--task", choices=["elliptic", "nlse"], required=True)
    solve.add_argument("--input", required=True, help="CSV field or PSD1 dataset file")
    solve.add_argument("--index", type=int, default=0, help="record index for PSD1 inputs")
    solve.add_argument("--tol", type=float, default=1e-10)
    solve.add_argument("--sigma", type=float, default=2.0)
    solve.add_argument("--step", type=float, default=0.4)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "solve":
            return cmd_solve(args)
        cfg, digest = _load_config(args.config)
        if args.command == "generate":
            return cmd_generate(cfg, digest, workers=args.workers, seed_override=args.seed)
        if args.command == "train":
            return cmd_train(cfg, digest, seed_override=args.seed)
        if args.command == "eval":
            return cmd_eval(cfg, digest)
        if args.command == "verify":
            return cmd_verify(cfg, digest, seed_override=args.seed)
        if args.command == "fit-reciprocal":
            return cmd_fit_reciprocal(cfg, digest)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (PdeSurrogateError, np.linalg.LinAlgError, ValueError, OSError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
