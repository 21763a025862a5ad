"""End-to-end acceptance checks, one test per criterion.

Each test reports through the ``record`` fixture so the terminal summary
prints a PASS/FAIL line per criterion, including any that errored.
"""

import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from featpinn import autodiff as ad
from featpinn import cli, kernel as kn, pde
from featpinn.featuremap import Family, FeatureMap, FeatureMapSpec, RbfKind
from featpinn.network import PinnNetwork, init_mlp
from featpinn.train import LbfgsState, TrainConfig, TrainState, adam_step, lbfgs_step, train

GOLDEN = Path(__file__).parent / "golden"
EXPECTED = GOLDEN / "expected"

# ---------------------------------------------------------------- 1: autodiff vs finite differences

FAMILY_SPECS = {
    Family.IDENTITY: {},
    Family.BASIC_ENCODING: {},
    Family.POSITIONAL_ENCODING: dict(m=4, sigma=4.0),
    Family.RANDOM_FOURIER: dict(m=16, sigma=1.0),
    Family.SINUSOIDAL: dict(m=16, sigma=1.0),
    Family.COMPLEX_TRIANGLE: dict(m=8),
    Family.COMPLEX_GAUSSIAN: dict(m=6, sigma=0.3),
    Family.RBF_INT: dict(m=16, sigma=0.5),
    Family.RBF_COMPACT: dict(m=16, sigma=0.5, xi=0.6),
    Family.RBF_POLY: dict(m=16, sigma=0.5, p_terms=3),
    Family.RBF_SURJECTIVE: dict(m=16, sigma=0.5, gamma=0.5),
}
H_INPUT = 2e-3
H_PARAM = 1e-3
FLOOR = 1e-6


def smooth_points(fmap: FeatureMap, rng, n: int) -> np.ndarray:
    """Random points whose FD stencils stay clear of the map's kinks and cutoffs."""
    reach = 3 * H_INPUT
    kept = []
    while sum(len(k) for k in kept) < n:
        x = rng.uniform(0.0, 1.0, (n, fmap.in_dim))
        ok = np.ones(n, bool)
        if fmap.spec.family is Family.COMPLEX_TRIANGLE:
            # kinks of max(0, 1 - |x - t| / (d/2)) at |x - t| = 0 and d/2
            dist = np.abs(x[:, :, None] - fmap.params["t"])
            gap = np.minimum(dist, np.abs(dist - 0.5 * fmap.in_dim))
            ok = gap.min(axis=(1, 2)) > reach
        elif fmap.spec.family is Family.RBF_COMPACT:
            r = np.sqrt(((x[:, None, :] - fmap.params["centers"]) ** 2).sum(-1))
            ok = np.abs(r - fmap.spec.xi).min(axis=1) > reach
        kept.append(x[ok])
    return np.concatenate(kept)[:n]


def richardson_second(u, x, j, h):
    """Fourth-order second difference along coordinate ``j``, Richardson-extrapolated."""
    def stencil(step):
        e = np.zeros(x.shape[1])
        e[j] = step
        return (-u(x + 2 * e) + 16 * u(x + e) - 30 * u(x) + 16 * u(x - e) - u(x - 2 * e)) / (12 * step**2)
    return (16 * stencil(h / 2) - stencil(h)) / 15


def rel_err(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), FLOOR)))


def family_errors(family, rng):
    fmap_spec = FeatureMapSpec(family=family, seed=1, **FAMILY_SPECS[family])
    net = PinnNetwork.build(fmap_spec, (32, 32), 1, [[0.0, 1.0], [0.0, 1.0]], seed=2)
    x = smooth_points(net.fmap, rng, 100)
    coef = rng.standard_normal(len(x))

    # input Hessian diagonal from one batched jet pass
    jet = net(ad.seed_jet(x))
    hess = np.asarray(ad.constant_value(jet.d2))[..., 0].T

    def u(xx):
        return np.asarray(net(xx))[:, 0]

    fd_hess = np.stack([richardson_second(u, x, j, H_INPUT) for j in range(x.shape[1])], axis=1)

    # gradient of sum_i c_i u(x_i) with respect to every parameter entry
    base = net.parameters()
    leaves = {k: ad.variable(v) for k, v in base.items()}
    ad.backward(ad.sum_(ad.mul(net(x, leaves), coef[:, None])))
    grads = {k: leaves[k].adjoint for k in base}

    def objective(arrays):
        return float(np.asarray(net(x, arrays))[:, 0] @ coef)

    worst_grad = 0.0
    for name, value in base.items():
        fd = np.zeros(value.size)
        for idx in range(value.size):
            vals = []
            for step in (2, 1, -1, -2):
                trial = dict(base)
                pert = value.copy().reshape(-1)
                pert[idx] += step * H_PARAM
                trial[name] = pert.reshape(value.shape)
                vals.append(objective(trial))
            fd[idx] = (-vals[0] + 8 * vals[1] - 8 * vals[2] + vals[3]) / (12 * H_PARAM)
        worst_grad = max(worst_grad, rel_err(np.ravel(grads[name]), fd))
    return worst_grad, rel_err(hess, fd_hess)


def test_criterion_01_autodiff_matches_finite_differences(record):
    rng = np.random.default_rng(0)
    errors = {family.value: max(family_errors(family, rng)) for family in FAMILY_SPECS}
    name = max(errors, key=errors.get)
    record(1, errors[name] < 1e-5,
           f"max rel err {errors[name]:.2e} ({name}) < 1e-5 over {len(errors)} families")


# ---------------------------------------------------------------- 2: partition of unity


def test_criterion_02_partition_of_unity(record):
    rng = np.random.default_rng(1)
    worst = 0.0
    for m in (16, 128):
        for kind in RbfKind:
            for family, extra in ((Family.RBF_INT, {}), (Family.RBF_COMPACT, {"xi": 0.5})):
                fmap = FeatureMap(FeatureMapSpec(family=family, m=m, rbf_kind=kind, sigma=0.3,
                                                 seed=m, **extra), 2)
                x = rng.uniform(0.0, 1.0, (1000, 2))
                total = np.asarray(fmap(x)).sum(axis=1)
                worst = max(worst, float(np.max(np.abs(total - 1.0))))
    record(2, worst < 1e-12, f"max |sum - 1| = {worst:.1e} < 1e-12")


# ---------------------------------------------------------------- 3: surjectivity bound


def erf_series(z: float, terms: int = 60) -> float:
    """Maclaurin series of erf, independent of any library erf."""
    total = sum((-1) ** n * z ** (2 * n + 1) / (math.factorial(n) * (2 * n + 1)) for n in range(terms))
    return 2.0 / math.sqrt(math.pi) * total


def test_criterion_03_surjectivity_bound(record):
    n = 100_000
    ok, parts = True, []
    for sigma in (0.5, 1.0, 2.0):
        p, bound = kn.surjectivity_estimate(sigma, n, seed=0)
        se = math.sqrt(p * (1 - p) / n)
        oracle = 0.5 * erf_series(1.0 / (math.sqrt(2.0) * sigma))
        ok &= p <= bound + 3 * se and abs(bound - oracle) < 1e-12
        parts.append(f"s={sigma}: {p:.4f}<={bound:.4f}")
    at_one = kn.surjectivity_bound(1.0)
    ok &= abs(at_one - 0.3414) < 1e-4
    record(3, ok, "; ".join(parts) + f"; bound(1)={at_one:.5f}")


# ---------------------------------------------------------------- 4: CK convergence with width


def test_criterion_04_ck_converges_with_width(record):
    x = np.random.default_rng(2).uniform(0.0, 1.0, (5, 2))
    spec = FeatureMapSpec(family=Family.RANDOM_FOURIER, sigma=0.5, seed=3)
    analytic = kn.feature_kernel(x, spec)
    n_inits = 2000
    diag = np.diag(analytic)
    # standard error of a second-moment estimate of jointly Gaussian entries
    se = float(np.max(np.sqrt((np.outer(diag, diag) + analytic**2) / n_inits)))
    errors = []
    for width in (64, 256, 1024):
        fmap = FeatureMap(spec.replace(m=width // 2), 2)
        emp = kn.empirical_first_layer(x, fmap, n_inits, seed=width)
        errors.append(float(np.max(np.abs(emp - analytic))))
    ok = all(b <= a + 2 * se for a, b in zip(errors, errors[1:]))
    record(4, ok, "max-entry errors " + ", ".join(f"{e:.3f}" for e in errors) + f" (2 SE = {2 * se:.3f})")


# ---------------------------------------------------------------- 5: NTK recursion


def test_criterion_05_ntk_recursion(record):
    rng = np.random.default_rng(4)
    x = rng.uniform(0.0, 1.0, (5, 2))
    spec = FeatureMapSpec(family=Family.RANDOM_FOURIER, m=512, sigma=0.5, seed=5)

    depth = 4
    stack = kn.propagate(x, spec, depth, activation="identity")
    s0, s1 = kn.input_kernel(x), kn.feature_kernel(x, spec)
    # Sigma^l = Sigma^1 + (l - 1) and every derivative kernel is 1
    closed = s0 + depth * s1 + depth * (depth - 1) / 2
    tele = float(np.max(np.abs(stack.theta[-1].entries - closed)))

    analytic = kn.ntk_propagate(x, spec, 3)[-1]
    fmap = FeatureMap(spec, 2)
    params = init_mlp([fmap.out_dim, 1024, 1024, 1], 6, scheme="normal", parameterization="ntk")
    rel = kn.relative_frobenius(kn.empirical_ntk(params, fmap, x), analytic)
    record(5, tele < 1e-10 and rel < 0.10,
           f"telescoping err {tele:.1e} < 1e-10; tanh width-1024 NTK rel Frobenius {rel:.3f} < 0.10")


# ---------------------------------------------------------------- 6: spectral decay


def test_criterion_06_spectral_decay_vs_gradient_flow(record):
    rng = np.random.default_rng(7)
    x = rng.uniform(0.0, 1.0, (8, 2))
    k = kn.ntk_propagate(x, FeatureMapSpec(family=Family.RANDOM_FOURIER, sigma=0.5), 2)[-1].entries
    y = rng.standard_normal(8)
    pred = kn.spectral_decay_predict(k, y, [1.0])

    dt = 1e-5
    e = -y.copy()
    for _ in range(int(round(1.0 / dt))):
        e = e - dt * (k @ e)
    # per-mode projections of the simulated residual on independently computed eigenvectors
    lam, q = np.linalg.eigh(k)
    order = np.argsort(lam)[::-1]
    sim_modes = np.abs(q[:, order].T @ e)
    rel = float(np.max(np.abs(np.abs(pred.modes[0]) - sim_modes) / sim_modes))
    record(6, rel < 0.01, f"max per-mode rel diff {rel:.1e} < 1e-2 (lambda max {lam.max():.2f})")


# ---------------------------------------------------------------- 7: registry self-consistency


def test_criterion_07_registry_self_consistency(record):
    worst = {name: pde.self_consistency(pde.get_problem(name), 100, seed=8)
             for name in ("wave", "diffusion", "poisson_nd")}
    worst["poisson_nd_d8"] = pde.self_consistency(pde.get_problem("poisson_nd", dim=8), 100, seed=8)
    ok = all(v <= 1e-8 for v in worst.values())
    record(7, ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + " (<= 1e-8)")


# ---------------------------------------------------------------- 8: diffusion forward solve


@pytest.mark.slow
def test_criterion_08_diffusion_forward_solve(record):
    cfg = TrainConfig(problem="diffusion",
                      feature_map={"family": "rbf_int", "m": 128, "sigma": 0.2},
                      hidden=(50, 50, 50), lambda_ic=100.0, lambda_bc=100.0,
                      adam_steps=5000, lbfgs_steps=500, seed=0)
    rep = train(cfg)
    record(8, rep.l2re < 5e-3, f"L2RE {rep.l2re:.2e} < 5e-3 in {rep.wall_s:.0f} s")


# ---------------------------------------------------------------- 9: high-dimensional Poisson trend


@pytest.mark.slow
def test_criterion_09_rbf_beats_fourier_on_high_dim_poisson(record):
    maps = {"rbf_int": {"family": "rbf_int", "m": 128, "sigma": 1.0},
            "random_fourier": {"family": "random_fourier", "m": 64, "sigma": 1.0}}
    means = {}
    for dim in (2, 8):
        for label, fm in maps.items():
            errs = [train(TrainConfig(problem="poisson_nd",
                                      problem_options={"dim": dim, "uneven": True},
                                      feature_map=fm, n_r=1000, n_bc=200, eval_points=30,
                                      adam_steps=1000, lbfgs_steps=100, seed=s)).l2re
                    for s in (0, 1, 2)]
            means[(dim, label)] = float(np.mean(errs))
    ok = means[(8, "rbf_int")] < means[(8, "random_fourier")]
    detail = "; ".join(f"D={d} {lab} {v:.3g}" for (d, lab), v in means.items())
    record(9, ok, "mean L2RE " + detail)


# ---------------------------------------------------------------- 10: inverse Lorenz


@pytest.mark.slow
def test_criterion_10_inverse_lorenz(record):
    cfg = TrainConfig(problem="lorenz_inverse", inverse=True,
                      feature_map={"family": "rbf_int", "m": 64, "sigma": 0.1},
                      n_r=400, n_ic=1, n_bc=0, data_points=40, noise=0.005,
                      output_scale=10.0, coeff_lr=0.01, adam_steps=10000, lbfgs_steps=500, seed=0)
    rep = train(cfg)
    coeffs = ", ".join(f"{k}={v:.3f}" for k, v in sorted(rep.coefficients.items()))
    record(10, rep.coefficient_error < 0.10,
           f"coefficient rel err {rep.coefficient_error:.3f} < 0.10 ({coeffs})")


# ---------------------------------------------------------------- 11: optimizers


def test_criterion_11_optimizer_properties(record):
    rng = np.random.default_rng(9)
    q = rng.normal(size=(5, 5))
    a = q @ q.T + 5 * np.eye(5)
    b = rng.normal(size=5)
    state = LbfgsState(np.zeros(5))
    for _ in range(25):
        state = lbfgs_step(state, lambda v: (0.5 * v @ a @ v - b @ v, a @ v - b))
        if np.linalg.norm(a @ state.x - b) < 1e-8:
            break
    gnorm = float(np.linalg.norm(a @ state.x - b))

    adam = TrainState({"t": np.array(1.0)})
    for _ in range(500):
        adam_step(adam, {"t": 2 * adam.params["t"]}, 0.1)
    theta = abs(float(adam.params["t"]))
    record(11, gnorm < 1e-8 and theta < 1e-3,
           f"L-BFGS |g| {gnorm:.1e} after {state.iterations} its; Adam |theta| {theta:.1e}")


# ---------------------------------------------------------------- 12: golden determinism


def cli_outputs(command: str, config: Path, out: Path) -> dict[str, str]:
    subprocess.run([sys.executable, "-m", "featpinn", command, str(config), "--out", str(out)],
                   check=True, capture_output=True)
    files = {}
    for path in sorted(out.iterdir()):
        text = path.read_text()
        if path.name == "report.json":
            text = json.dumps(cli.strip_timing(json.loads(text)), indent=2, sort_keys=True) + "\n"
        elif path.name == "sweep.csv":
            rows = [line.split(",") for line in text.splitlines()]
            k = rows[0].index("wall_s")
            text = "\n".join(",".join(r[:k] + r[k + 1:]) for r in rows) + "\n"
        files[path.name] = text
    return files


def test_criterion_12_golden_determinism(record, tmp_path):
    runs = [("train", "train_diffusion"), ("train", "train_lorenz"),
            ("sweep", "sweep_xi"), ("kernel", "kernel_rf")]
    problems = []
    for command, name in runs:
        first = cli_outputs(command, GOLDEN / f"{name}.json", tmp_path / name / "a")
        second = cli_outputs(command, GOLDEN / f"{name}.json", tmp_path / name / "b")
        if first != second:
            problems.append(f"{name}: runs differ")
        for fname, text in first.items():
            if text != (EXPECTED / name / fname).read_text():
                problems.append(f"{name}/{fname}: differs from golden")
    record(12, not problems, "; ".join(problems) or f"{len(runs)} configs byte-identical twice and to golden")
