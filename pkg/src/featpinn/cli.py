"""Command-line experiment runner.

Exit codes: 0 success, 1 runtime failure, 2 bad invocation or config.  On
failure a JSON object ``{"error": {...}}`` is written to stderr.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import sys
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import analysis, kernel, pde
from .featuremap import FeatureMapSpec, SpecError
from .train import ConfigError, TrainConfig, TrainReport, train

SCHEMA_VERSION = 1
SECTIONS = ("problem", "feature_map", "network", "training", "sweep", "kernel", "output")
PROBLEM_KEYS = ("name", "options")
NETWORK_KEYS = ("hidden", "output_scale")
TRAINING_KEYS = ("n_r", "n_ic", "n_bc", "lambda_r", "lambda_ic", "lambda_bc", "lambda_data",
                 "adam_steps", "lr", "coeff_lr", "lbfgs_steps", "lbfgs_memory",
                 "resample_every", "record_every", "seed", "inverse", "data_points", "noise",
                 "coeff_init", "eval_points", "checkpoint_every")
SWEEP_KEYS = ("axis", "values", "seeds", "workers")
KERNEL_KEYS = ("n_points", "depth", "seed", "method", "order", "samples", "activation",
               "n_draws", "t")
OUTPUT_KEYS = ("dir", "prediction_grid", "checkpoint")
KERNEL_DEFAULTS = {"n_points": 8, "depth": 3, "seed": 0, "method": "gauss_hermite",
                   "order": 32, "samples": 100000, "activation": "tanh", "n_draws": 64,
                   "t": [0.0, 0.25, 0.5, 1.0, 2.0]}
OUTPUT_DEFAULTS = {"dir": "featpinn_out", "prediction_grid": 101, "checkpoint": False}


class CliError(Exception):
    def __init__(self, code: int, stage: str, message: str, **extra):
        super().__init__(message)
        self.code = code
        self.stage = stage
        self.extra = extra


# --------------------------------------------------------------------------- config


@dataclasses.dataclass
class ExperimentConfig:
    train: TrainConfig
    sweep: dict | None
    kernel: dict
    output: dict
    raw: dict


def _check_keys(section: str, data: Any, allowed: Sequence[str]) -> dict:
    if not isinstance(data, Mapping):
        raise CliError(2, "config", f"section '{section}' must be an object", section=section)
    for key in data:
        if key not in allowed:
            raise CliError(2, "config", f"unknown key '{section}.{key}'", key=f"{section}.{key}")
    return dict(data)


def parse_config(text: str) -> ExperimentConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(2, "parse", f"malformed JSON: {exc.msg}",
                       line=exc.lineno, column=exc.colno) from None
    top = _check_keys("config", raw, SECTIONS)
    prob = _check_keys("problem", top.get("problem", {}), PROBLEM_KEYS)
    net = _check_keys("network", top.get("network", {}), NETWORK_KEYS)
    tr = _check_keys("training", top.get("training", {}), TRAINING_KEYS)
    fm = _check_keys("feature_map", top.get("feature_map", {}),
                     [f.name for f in dataclasses.fields(FeatureMapSpec)])
    for required in ("problem", "feature_map", "network", "training"):
        if required not in top:
            raise CliError(2, "config", f"missing section '{required}'", key=required)
    sweep = _check_keys("sweep", top["sweep"], SWEEP_KEYS) if "sweep" in top else None
    kern = {**KERNEL_DEFAULTS, **_check_keys("kernel", top.get("kernel", {}), KERNEL_KEYS)}
    out = {**OUTPUT_DEFAULTS, **_check_keys("output", top.get("output", {}), OUTPUT_KEYS)}
    if "name" not in prob:
        raise CliError(2, "config", "problem.name is required", key="problem.name")
    try:
        cfg = TrainConfig(problem=prob["name"], problem_options=prob.get("options", {}),
                          feature_map=FeatureMapSpec.from_dict(fm),
                          hidden=tuple(net.get("hidden", (50, 50, 50))),
                          output_scale=net.get("output_scale", 1.0), **tr)
        if sweep is not None:
            if "axis" not in sweep or "values" not in sweep:
                raise ConfigError("sweep needs 'axis' and 'values'")
            analysis.SweepSpec(cfg, sweep["axis"], sweep["values"],
                               sweep.get("seeds", analysis.DEFAULT_SEEDS))
        kernel.GaussianExpectationRule(kern["method"], kern["order"], kern["samples"], kern["seed"])
        if kern["activation"] not in kernel.ACTIVATION_PAIRS:
            raise ConfigError(f"unknown activation '{kern['activation']}'")
        pde.get_problem(cfg.problem, **cfg.problem_options)
    except (SpecError, ConfigError, analysis.SweepError, kernel.KernelError,
            pde.ProblemError, TypeError, ValueError) as exc:
        raise CliError(2, "config", str(exc)) from None
    return ExperimentConfig(cfg, sweep, kern, out, raw)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(2, "parse", f"cannot read config: {exc}") from None
    return parse_config(text)


# --------------------------------------------------------------------------- outputs


def _ensure_dir(path) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(1, "output", f"cannot create output directory: {exc}") from None
    return p


def report_document(report: TrainReport, config: TrainConfig) -> dict:
    body = report.to_json_dict()
    wall = body.pop("wall_s")
    return {"schema_version": SCHEMA_VERSION, "kind": "train_report",
            "config": config.to_dict(), "report": body, "timing": {"wall_s": wall}}


def strip_timing(doc: Mapping) -> dict:
    """Copy of a report document without wall-time fields."""
    return {k: v for k, v in doc.items() if k != "timing"}


def prediction_points(problem: pde.PdeProblem, n: int) -> np.ndarray:
    dims = problem.dims
    if dims > 3:
        return np.random.default_rng(12345).uniform(problem.bounds[:, 0], problem.bounds[:, 1],
                                                    (n * n, dims))
    per_axis = n if dims <= 2 else min(n, 41)
    axes = [np.linspace(lo, hi, per_axis) for lo, hi in problem.bounds]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], 1)
    return pts[problem.in_domain(pts)]


def write_curves_csv(path, curves: Mapping[str, list], with_data: bool) -> None:
    cols = ["step", "loss_total", "loss_r", "loss_ic", "loss_bc"] + (["loss_data"] if with_data else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for i in range(len(curves.get("step", []))):
            w.writerow([curves["step"][i]] + [repr(float(curves[c][i])) for c in cols[1:]])


def emit_report(report: TrainReport, config: TrainConfig, output: Mapping) -> dict[str, Path]:
    """Write report JSON, loss-curve CSV and prediction-grid CSV."""
    out = _ensure_dir(output["dir"])
    paths = {"report": out / "report.json", "curves": out / "curves.csv",
             "prediction": out / "prediction.csv"}
    try:
        doc = report_document(report, config)
        paths["report"].write_text(json.dumps(doc, indent=2, sort_keys=True)
                                   + "\n")
        write_curves_csv(paths["curves"], report.curves, config.inverse)
        problem = pde.get_problem(config.problem, **config.problem_options)
        from .train import build_network
        net = build_network(config, problem)
        net.load_parameters({k: v for k, v in report.params.items() if not k.startswith("coeff.")})
        pts = prediction_points(problem, int(output["prediction_grid"]))
        pde.write_reference_csv(paths["prediction"], pts, np.asarray(net(pts)))
    except OSError as exc:
        raise CliError(1, "output", f"cannot write outputs: {exc}") from None
    return paths


def load_report(path) -> dict:
    return json.loads(Path(path).read_text())


# --------------------------------------------------------------------------- commands


def cmd_train(args) -> int:
    exp = load_config(args.config)
    output = dict(exp.output)
    if args.out:
        output["dir"] = args.out
    cfg = exp.train
    if output.get("checkpoint"):
        _ensure_dir(output["dir"])
        cfg = cfg.replace(checkpoint_path=str(Path(output["dir"]) / "checkpoint.bin"))
    try:
        report = train(cfg)
    except Exception as exc:
        raise CliError(1, "train", f"{type(exc).__name__}: {exc}") from None
    paths = emit_report(report, exp.train, output)
    print(json.dumps({"l2re": report.l2re, "coefficients": report.coefficients,
                      "report": str(paths["report"])}, sort_keys=True))
    return 0


def cmd_sweep(args) -> int:
    exp = load_config(args.config)
    if exp.sweep is None:
        raise CliError(2, "config", "config has no 'sweep' section", key="sweep")
    output = dict(exp.output)
    if args.out:
        output["dir"] = args.out
    spec = analysis.SweepSpec(exp.train, exp.sweep["axis"], exp.sweep["values"],
                              exp.sweep.get("seeds", analysis.DEFAULT_SEEDS))
    workers = args.workers if args.workers is not None else exp.sweep.get("workers")
    try:
        result = analysis.run_sweep(spec, workers)
    except Exception as exc:
        raise CliError(1, "sweep", f"{type(exc).__name__}: {exc}") from None
    out = _ensure_dir(output["dir"])
    try:
        analysis.write_sweep_csv(out / "sweep.csv", result.cells)
        analysis.write_aggregate_csv(out / "aggregate.csv", result.aggregates)
    except OSError as exc:
        raise CliError(1, "output", str(exc)) from None
    print(json.dumps({"cells": len(result.cells),
                      "failed": sum(c.error is not None for c in result.cells),
                      "aggregate": str(out / "aggregate.csv")}, sort_keys=True))
    return 0


def cmd_kernel(args) -> int:
    exp = load_config(args.config)
    output = dict(exp.output)
    if args.out:
        output["dir"] = args.out
    k = exp.kernel
    cfg = exp.train
    try:
        problem = pde.get_problem(cfg.problem, **cfg.problem_options)
        rng = np.random.default_rng(k["seed"])
        # kernels act on coordinates scaled to the unit box, like the network
        x = rng.uniform(0.0, 1.0, (int(k["n_points"]), problem.dims))
        rule = kernel.GaussianExpectationRule(k["method"], k["order"], k["samples"], k["seed"])
        stack = kernel.propagate(x, cfg.feature_map, int(k["depth"]), rule, k["activation"],
                                 int(k["n_draws"]))
        ntk = stack.theta[-1]
        lam, q = kernel.sym_eig(ntk)
        targets = rng.standard_normal(len(x))
        pred = kernel.spectral_decay_predict(ntk, targets, k["t"])
    except Exception as exc:
        raise CliError(1, "kernel", f"{type(exc).__name__}: {exc}") from None
    out = _ensure_dir(output["dir"])
    try:
        kernel.write_spectrum_csv(out / "spectrum.csv", lam)
        kernel.write_decay_csv(out / "decay.csv", pred)
        ck_lam, _ = kernel.sym_eig(stack.sigma[-1])
        kernel.write_spectrum_csv(out / "ck_spectrum.csv", ck_lam)
    except OSError as exc:
        raise CliError(1, "output", str(exc)) from None
    print(json.dumps({"clipped": stack.clipped, "max_eigenvalue": float(lam[0]),
                      "spectrum": str(out / "spectrum.csv")}, sort_keys=True))
    return 0


def cmd_surjectivity(args) -> int:
    try:
        p, bound = kernel.surjectivity_estimate(args.sigma, args.samples, args.seed)
    except kernel.KernelError as exc:
        raise CliError(2, "surjectivity", str(exc)) from None
    se = math.sqrt(p * (1.0 - p) / args.samples)
    print(json.dumps({"mc_probability": p, "analytic_bound": bound, "standard_error": se},
                     sort_keys=True))
    return 0


def cmd_list_problems(args) -> int:
    for name in pde.PROBLEM_NAMES:
        prob = pde.get_problem(name)
        print(f"{name}\t{prob.description}")
    return 0


def cmd_validate(args) -> int:
    load_config(args.config)
    print(json.dumps({"valid": True, "config": str(args.config)}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="featpinn",
                                     description="PINN experiments with feature-mapping layers.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("train", help="train one model and write report, curves and predictions")
    p.add_argument("config", help="experiment config JSON file")
    p.add_argument("--out", help="output directory (overrides output.dir)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="run a parameter sweep and write per-cell and aggregate CSVs")
    p.add_argument("config", help="experiment config JSON file with a 'sweep' section")
    p.add_argument("--out", help="output directory (overrides output.dir)")
    p.add_argument("--workers", type=int, help="worker processes (capped by FEATPINN_THREADS)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("kernel", help="compute limiting kernels and write spectra CSVs")
    p.add_argument("config", help="experiment config JSON file")
    p.add_argument("--out", help="output directory (overrides output.dir)")
    p.set_defaults(func=cmd_kernel)

    p = sub.add_parser("surjectivity", help="estimate the injectivity probability of sin(2 pi B x)")
    p.add_argument("--sigma", type=float, required=True, help="standard deviation of B")
    p.add_argument("--samples", type=int, default=100000, help="Monte-Carlo draws (>= 1000)")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.set_defaults(func=cmd_surjectivity)

    p = sub.add_parser("list-problems", help="list registered benchmark problems")
    p.set_defaults(func=cmd_list_problems)

    p = sub.add_parser("validate", help="check a config without running anything")
    p.add_argument("config", help="experiment config JSON file")
    p.set_defaults(func=cmd_validate)
    return parser


def _error_json(stage: str, message: str, **extra) -> str:
    return json.dumps({"error": {"stage": stage, "message": message, **extra}}, sort_keys=True)


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = int(exc.code or 0)
        if code:
            print(_error_json("arguments", "invalid command line"), file=sys.stderr)
        return code
    try:
        return args.func(args)
    except CliError as exc:
        print(_error_json(exc.stage, str(exc), **exc.extra), file=sys.stderr)
        return exc.code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
