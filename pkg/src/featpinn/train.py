"""Composite PINN loss, Adam and L-BFGS, and the training driver."""

from __future__ import annotations

import dataclasses
import math
import time
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from . import pde as pdemod
from .featuremap import FeatureMapSpec, SpecError
from .network import PinnNetwork, save_checkpoint

TERMS = ("r", "ic", "bc", "data")


class ConfigError(ValueError):
    """Invalid training configuration."""


class TrainingError(RuntimeError):
    def __init__(self, step: int, stage: str, cause: Exception):
        super().__init__(f"{stage} failed at step {step}: {cause}")
        self.step = step
        self.stage = stage
        self.cause = cause


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    problem: str = "diffusion"
    problem_options: Mapping[str, Any] = dataclasses.field(default_factory=dict)
    feature_map: FeatureMapSpec = dataclasses.field(default_factory=FeatureMapSpec)
    hidden: tuple[int, ...] = (50, 50, 50)
    n_r: int = 1000
    n_ic: int = 200
    n_bc: int = 200
    lambda_r: float = 1.0
    lambda_ic: float | None = None
    lambda_bc: float | None = None
    lambda_data: float = 1.0
    adam_steps: int = 5000
    lr: float = 1e-3
    coeff_lr: float | None = None
    lbfgs_steps: int = 500
    lbfgs_memory: int = 10
    resample_every: int = 1000
    record_every: int = 100
    seed: int = 0
    inverse: bool = False
    data_points: int = 40
    noise: float = 0.0
    coeff_init: float | Mapping[str, float] = 1.0
    output_scale: float = 1.0
    eval_points: int = 101
    checkpoint_path: str | None = None
    checkpoint_every: int = 1000

    def __post_init__(self):
        if not isinstance(self.feature_map, FeatureMapSpec):
            object.__setattr__(self, "feature_map", FeatureMapSpec.from_dict(self.feature_map))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "problem_options", dict(self.problem_options))
        if self.problem not in pdemod.PROBLEM_NAMES:
            raise ConfigError(f"unknown problem '{self.problem}'")
        if not self.hidden:
            raise ConfigError("at least one hidden layer is required")
        for name in ("n_r", "n_ic", "n_bc", "adam_steps", "lbfgs_steps", "data_points"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        for name in ("lambda_r", "lambda_ic", "lambda_bc", "lambda_data", "noise"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ConfigError(f"{name} must be non-negative")
        if not self.lr > 0:
            raise ConfigError("learning rate must be positive")
        if self.coeff_lr is not None and not self.coeff_lr > 0:
            raise ConfigError("coeff_lr must be positive")
        if self.lbfgs_memory < 1 or self.resample_every < 1 or self.record_every < 1:
            raise ConfigError("lbfgs_memory, resample_every and record_every must be >= 1")
        if self.inverse and self.problem not in ("lorenz_inverse", "burgers_inverse"):
            raise ConfigError(f"problem '{self.problem}' has no unknown coefficients")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["feature_map"] = self.feature_map.to_dict()
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown training key: {unknown[0]}")
        return cls(**dict(data))

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def weights(self, problem: pdemod.PdeProblem) -> dict[str, float]:
        default = 100.0 if problem.time_dependent else 1.0
        return {"r": self.lambda_r,
                "ic": default if self.lambda_ic is None else self.lambda_ic,
                "bc": default if self.lambda_bc is None else self.lambda_bc,
                "data": self.lambda_data}


@dataclasses.dataclass
class TrainState:
    params: dict[str, np.ndarray]
    m: dict[str, np.ndarray] = dataclasses.field(default_factory=dict)
    v: dict[str, np.ndarray] = dataclasses.field(default_factory=dict)
    step: int = 0

    def __post_init__(self):
        self.params = {k: np.array(v, dtype=np.float64) for k, v in self.params.items()}
        for k, p in self.params.items():
            self.m.setdefault(k, np.zeros_like(p))
            self.v.setdefault(k, np.zeros_like(p))


@dataclasses.dataclass
class TrainReport:
    problem: str
    l2re: float | None
    curves: dict[str, list]
    wall_s: float
    diagnostics: dict[str, int]
    coefficients: dict[str, float]
    coefficient_error: float | None
    final_losses: dict[str, float]
    steps: int
    params: dict[str, np.ndarray] = dataclasses.field(default_factory=dict, repr=False)

    def to_json_dict(self) -> dict:
        return {"problem": self.problem, "l2re": self.l2re, "steps": self.steps,
                "final_losses": self.final_losses, "coefficients": self.coefficients,
                "coefficient_error": self.coefficient_error,
                "diagnostics": self.diagnostics, "curves": self.curves, "wall_s": self.wall_s}


# --------------------------------------------------------------------------- metrics


def l2re(pred, truth) -> float:
    """Relative l2 error ``||pred - truth|| / ||truth||``."""
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    truth = np.asarray(truth, dtype=np.float64).reshape(-1)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.size} vs {truth.size}")
    den = float(np.sum(truth**2))
    if den == 0.0:
        raise ValueError("l2re undefined for an all-zero reference")
    return math.sqrt(float(np.sum((pred - truth) ** 2)) / den)


# --------------------------------------------------------------------------- loss


def _mse_columns(r):
    # sum over columns of the per-column mean square
    return ad.sum_(ad.mean(ad.mul(r, r), axis=0))


def loss(params: Mapping, net: PinnNetwork, problem: pdemod.PdeProblem, batch: pdemod.SampleBatch,
         weights: Mapping[str, float], data: tuple[np.ndarray, np.ndarray] | None = None):
    """Weighted composite loss and its unweighted parts.

    ``params`` holds network blocks (``feature.*``, ``mlp.*``) and unknown
    coefficients (``coeff.*``); values may be arrays or tape variables.
    """
    net_params = {k: v for k, v in params.items() if not k.startswith("coeff.")}
    coeffs = {k[6:]: v for k, v in params.items() if k.startswith("coeff.")}

    def u_fn(x):
        return net(x, net_params)

    parts: dict[str, Any] = {}
    present = {"r": True, "ic": problem.ic is not None and problem.time_dependent,
               "bc": problem.bc is not None, "data": data is not None}
    sizes = {"r": len(batch.x_r), "ic": len(batch.x_ic), "bc": len(batch.x_bc),
             "data": 0 if data is None else len(data[0])}
    for term in TERMS:
        if present[term] and weights.get(term, 0.0) > 0 and sizes[term] == 0:
            raise ConfigError(f"loss term '{term}' has positive weight but no points")
    if sizes["r"]:
        parts["r"] = _mse_columns(pdemod.residual(problem, u_fn, batch.x_r, coeffs))
    if present["ic"] and sizes["ic"]:
        parts["ic"] = _mse_columns(pdemod.ic_residual(problem, u_fn, batch.x_ic))
    if present["bc"] and sizes["bc"]:
        parts["bc"] = _mse_columns(pdemod.bc_residual(problem, u_fn, batch.x_bc, batch.bc_labels))
    if present["data"] and sizes["data"]:
        parts["data"] = _mse_columns(ad.sub(u_fn(data[0]), data[1]))
    total = 0.0
    for term, value in parts.items():
        total = ad.add(total, ad.mul(weights.get(term, 0.0), value))
    return total, parts


def loss_and_grad(params: Mapping[str, np.ndarray], net, problem, batch, weights, data=None):
    """Loss value, float parts and gradient dict for every parameter block."""
    leaves = {k: ad.variable(v) for k, v in params.items()}
    total, parts = loss(leaves, net, problem, batch, weights, data)
    grads = {k: np.zeros_like(v.value) for k, v in leaves.items()}
    if isinstance(total, ad.Node):
        ad.backward(total)
        for k, v in leaves.items():
            if v.adjoint is not None:
                grads[k] = np.array(v.adjoint, dtype=np.float64).reshape(v.value.shape)
    fparts = {k: float(ad.constant_value(v)) for k, v in parts.items()}
    return float(ad.constant_value(total)), fparts, grads


# --------------------------------------------------------------------------- optimisers


def adam_step(state: TrainState, grads: Mapping[str, np.ndarray], lr: float | Mapping[str, float],
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> TrainState:
    """One bias-corrected Adam update, in place; returns ``state``."""
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter block '{k}'")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for k, g in grads.items():
        m = state.m[k] = beta1 * state.m[k] + (1.0 - beta1) * g
        v = state.v[k] = beta2 * state.v[k] + (1.0 - beta2) * g * g
        rate = lr[k] if isinstance(lr, Mapping) else lr
        if rate:
            state.params[k] = state.params[k] - rate * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


@dataclasses.dataclass
class LbfgsState:
    x: np.ndarray
    f: float | None = None
    g: np.ndarray | None = None
    s_hist: list = dataclasses.field(default_factory=list)
    y_hist: list = dataclasses.field(default_factory=list)
    stalled: bool = False
    skipped: int = 0
    iterations: int = 0


def _two_loop(g, s_hist, y_hist):
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(s_hist), reversed(y_hist)):
        rho = 1.0 / float(y @ s)
        a = rho * float(s @ q)
        q -= a * y
        alphas.append((rho, a))
    if s_hist:
        s, y = s_hist[-1], y_hist[-1]
        q *= float(s @ y) / float(y @ y)
    for (s, y), (rho, a) in zip(zip(s_hist, y_hist), reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return -q


def lbfgs_step(state: LbfgsState, closure: Callable[[np.ndarray], tuple[float, np.ndarray]],
               memory: int = 10, c1: float = 1e-4, max_halvings: int = 40) -> LbfgsState:
    """One L-BFGS iteration with backtracking Armijo search.

    ``closure(x)`` returns ``(f, grad)``.  On line-search failure the state is
    returned unchanged except for ``stalled = True``.
    """
    if state.f is None:
        state.f, state.g = closure(state.x)
    g = state.g
    if not np.any(g):
        return state
    p = _two_loop(g, state.s_hist, state.y_hist)
    slope = float(g @ p)
    if not slope < 0:
        p, slope = -g, -float(g @ g)
    # without curvature history the direction is the raw gradient; cap its length
    step = 1.0 if state.s_hist else min(1.0, 1.0 / float(np.linalg.norm(g)))
    for _ in range(max_halvings + 1):
        x_new = state.x + step * p
        try:
            f_new, g_new = closure(x_new)
        except (ArithmeticError, ad.AutodiffError):
            f_new, g_new = math.inf, None
        if math.isfinite(f_new) and f_new <= state.f + c1 * step * slope:
            break
        step *= 0.5
    else:
        state.stalled = True
        return state
    s, y = x_new - state.x, g_new - g
    if float(s @ y) > 1e-10:
        state.s_hist.append(s)
        state.y_hist.append(y)
        if len(state.s_hist) > memory:
            state.s_hist.pop(0)
            state.y_hist.pop(0)
    else:
        state.skipped += 1
    state.x, state.f, state.g = x_new, f_new, g_new
    state.stalled = False
    state.iterations += 1
    return state


def flatten(params: Mapping[str, np.ndarray]) -> tuple[np.ndarray, list]:
    layout = [(k, np.shape(params[k])) for k in sorted(params)]
    vec = np.concatenate([np.ravel(params[k]) for k, _ in layout]) if layout else np.zeros(0)
    return vec, layout


def unflatten(vec: np.ndarray, layout) -> dict[str, np.ndarray]:
    out, i = {}, 0
    for k, shape in layout:
        n = int(np.prod(shape)) if shape else 1
        out[k] = vec[i:i + n].reshape(shape)
        i += n
    return out


# --------------------------------------------------------------------------- driver


def build_network(config: TrainConfig, problem: pdemod.PdeProblem) -> PinnNetwork:
    return PinnNetwork.build(config.feature_map, config.hidden, problem.out_dim, problem.bounds,
                             config.seed, out_scale=config.output_scale)


def inverse_data(config: TrainConfig, problem: pdemod.PdeProblem):
    """Supervised observations for inverse problems, with optional noise."""
    rng = np.random.default_rng(config.seed + 104729)
    n = config.data_points
    if problem.name == "lorenz_inverse":
        t = np.linspace(0.0, 3.0, n)
        per = 100
        traj = pdemod.integrate_lorenz(pdemod.LORENZ_TRUE, pdemod.LORENZ_X0,
                                       3.0 / ((n - 1) * per), (n - 1) * per)
        x, y = t[:, None], traj[::per].copy()
    elif problem.name == "burgers_inverse":
        x = rng.uniform(problem.bounds[:, 0], problem.bounds[:, 1], (n, 2))
        y = pdemod.burgers_reference(x[:, 0], x[:, 1])[:, None]
    else:
        raise ConfigError(f"no observation generator for {problem.name}")
    if config.noise > 0:
        y = y + config.noise * np.std(y, axis=0) * rng.standard_normal(y.shape)
    return x, y


def _initial_coeffs(config, problem):
    out = {}
    for name in problem.coeffs:
        init = config.coeff_init
        value = init.get(name, 1.0) if isinstance(init, Mapping) else init
        out[f"coeff.{name}"] = np.array(float(value))
    return out


def _predict(net, params, x, chunk=20000):
    netp = {k: v for k, v in params.items() if not k.startswith("coeff.")}
    return np.concatenate([np.asarray(net(x[i:i + chunk], netp)) for i in range(0, len(x), chunk)])


def evaluate(config: TrainConfig, problem, net, params) -> float | None:
    try:
        pts, ref = pdemod.reference_grid(problem, config.eval_points)
    except pdemod.UnsupportedError:
        return None
    return l2re(_predict(net, params, pts), ref)


def train(config: TrainConfig, progress: Callable[[int, float], None] | None = None) -> TrainReport:
    """Adam phase, then L-BFGS on a frozen batch; returns the run report."""
    t0 = time.perf_counter()
    problem = pdemod.get_problem(config.problem, **config.problem_options)
    if problem.is_inverse and not config.inverse:
        coeff_params: dict[str, np.ndarray] = {}
    else:
        coeff_params = _initial_coeffs(config, problem)
    net = build_network(config, problem)
    state = TrainState({**net.parameters(), **coeff_params})
    weights = config.weights(problem)
    data = inverse_data(config, problem) if config.inverse else None

    fixed_coeffs = {} if config.inverse else {f"coeff.{k}": np.array(v)
                                              for k, v in problem.coeffs.items()}
    lr = {k: (config.coeff_lr if k.startswith("coeff.") and config.coeff_lr else config.lr)
          for k in state.params}
    curves: dict[str, list] = {"step": [], "loss_total": []}
    for term in TERMS:
        curves[f"loss_{term}"] = []
    last: dict[str, float] = {}

    def record(step, total, parts):
        curves["step"].append(step)
        curves["loss_total"].append(total)
        for term in TERMS:
            curves[f"loss_{term}"].append(parts.get(term, 0.0))

    def checkpoint(step):
        if config.checkpoint_path and step % config.checkpoint_every == 0:
            save_checkpoint(config.checkpoint_path, state.params, {"step": step})

    def sample(k):
        return pdemod.sample_domain(problem, config.n_r, config.n_ic, config.n_bc,
                                    config.seed + 7919 * (k + 1))

    batch = sample(0)
    step = 0
    for i in range(config.adam_steps):
        if i and i % config.resample_every == 0:
            batch = sample(i // config.resample_every)
        try:
            total, parts, grads = loss_and_grad({**state.params, **fixed_coeffs}, net, problem,
                                                batch, weights, data)
            adam_step(state, {k: grads[k] for k in state.params}, lr)
        except (ad.AutodiffError, FloatingPointError, ZeroDivisionError) as exc:
            raise TrainingError(step + 1, "adam", exc) from exc
        step += 1
        last = {"total": total, **parts}
        if step % config.record_every == 0:
            record(step, total, parts)
            if progress:
                progress(step, total)
        checkpoint(step)

    stalls = skipped = 0
    if config.lbfgs_steps:
        names = sorted(state.params)
        vec, layout = flatten(state.params)
        cache: dict[str, Any] = {}

        def closure(x):
            p = unflatten(x, layout)
            f, parts, g = loss_and_grad({**p, **fixed_coeffs}, net, problem, batch, weights, data)
            cache["parts"] = parts
            return f, flatten({k: g[k] for k in names})[0]

        lstate = LbfgsState(vec)
        for _ in range(config.lbfgs_steps):
            try:
                lstate = lbfgs_step(lstate, closure, config.lbfgs_memory)
            except (ad.AutodiffError, FloatingPointError, ZeroDivisionError) as exc:
                raise TrainingError(step + 1, "lbfgs", exc) from exc
            if lstate.stalled:
                stalls += 1
                break
            step += 1
            state.params = unflatten(lstate.x.copy(), layout)
            f, parts, _ = lstate.f, cache.get("parts", {}), None
            # cache holds the parts of the last trial point, which is the accepted one
            last = {"total": f, **parts}
            if step % config.record_every == 0:
                record(step, f, parts)
                if progress:
                    progress(step, f)
            checkpoint(step)
        skipped = lstate.skipped

    if not last:
        total, parts = loss({**state.params, **fixed_coeffs}, net, problem, batch, weights, data)
        last = {"total": float(ad.constant_value(total)),
                **{k: float(ad.constant_value(v)) for k, v in parts.items()}}
    net.load_parameters({k: v for k, v in state.params.items() if not k.startswith("coeff.")})
    coeffs = {k[6:]: float(v) for k, v in state.params.items() if k.startswith("coeff.")}
    coeff_err = None
    if coeffs:
        names = sorted(coeffs)
        coeff_err = l2re([coeffs[n] for n in names], [problem.coeffs[n] for n in names])
    return TrainReport(
        problem=config.problem,
        l2re=evaluate(config, problem, net, state.params),
        curves=curves,
        wall_s=time.perf_counter() - t0,
        diagnostics={"empty_support": net.fmap.diagnostics["empty_support"],
                     "lbfgs_stalls": stalls, "lbfgs_skipped_pairs": skipped},
        coefficients=coeffs,
        coefficient_error=coeff_err,
        final_losses={"loss_total": last.get("total", 0.0),
                      **{f"loss_{t}": last.get(t, 0.0) for t in TERMS}},
        steps=step,
        params=dict(state.params),
    )
