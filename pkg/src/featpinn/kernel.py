"""Limiting kernels of a feature-mapped tanh MLP and related spectral tools.

Layer convention (depth ``L`` = number of linear layers after the features)::

    f^1 = W^1 phi(x) / sqrt(d^0) + b^1
    f^l = W^l tanh(f^{l-1}) / sqrt(d^{l-1}) + b^l      l = 2..L

with standard normal ``W`` and ``b``.  ``Sigma^0 = <x, x'> + 1`` is the
input-layer kernel; ``Sigma^l`` is the covariance of ``f^l``.
"""

from __future__ import annotations

import csv
import dataclasses
import enum
import math
from typing import Callable, Sequence

import numpy as np
from scipy import special

from . import autodiff as ad
from .featuremap import Family, FeatureMap, FeatureMapSpec
from .network import MlpParams, mlp_forward


class KernelError(ValueError):
    """Kernel contract violation (asymmetry, indefiniteness, bad shapes)."""


class KernelKind(str, enum.Enum):
    CK = "ck"
    NTK = "ntk"
    CK_DERIVATIVE = "ck_derivative"
    EMPIRICAL = "empirical"


SYM_TOL = 1e-10
PSD_TOL = 1e-8


@dataclasses.dataclass(frozen=True)
class KernelMatrix:
    entries: np.ndarray
    layer: int
    kind: KernelKind

    def __post_init__(self):
        k = np.asarray(self.entries, dtype=np.float64)
        object.__setattr__(self, "kind", KernelKind(self.kind))
        if k.ndim != 2 or k.shape[0] != k.shape[1]:
            raise KernelError(f"kernel must be square, got shape {k.shape}")
        scale = max(1.0, float(np.max(np.abs(k)))) if k.size else 1.0
        if np.max(np.abs(k - k.T), initial=0.0) > SYM_TOL * scale:
            raise KernelError(f"{self.kind.value} kernel at layer {self.layer} is not symmetric")
        if self.kind in (KernelKind.CK, KernelKind.NTK) and k.size:
            ev = np.linalg.eigvalsh(0.5 * (k + k.T))
            if ev[0] < -PSD_TOL * max(ev[-1], 0.0):
                raise KernelError(f"{self.kind.value} kernel at layer {self.layer} is not PSD "
                                  f"(min eigenvalue {ev[0]:.3e})")
        object.__setattr__(self, "entries", k)


@dataclasses.dataclass(frozen=True)
class GaussianExpectationRule:
    method: str = "gauss_hermite"
    order: int = 32
    samples: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if self.method not in ("gauss_hermite", "monte_carlo"):
            raise KernelError(f"unknown expectation method '{self.method}'")
        if self.order < 2:
            raise KernelError("quadrature order must be at least 2")
        if self.samples < 1:
            raise KernelError("sample count must be positive")


ACTIVATION_PAIRS: dict[str, tuple[Callable, Callable]] = {
    "tanh": (np.tanh, lambda z: 1.0 / np.cosh(z) ** 2),
    "identity": (lambda z: z, lambda z: np.ones_like(z)),
}


def bivariate_expectation(f: Callable, g: Callable, k11, k12, k22,
                          rule: GaussianExpectationRule = GaussianExpectationRule(),
                          counter: dict | None = None) -> np.ndarray:
    """Entrywise ``E[f(X) g(X')]`` for ``(X, X')`` centred Gaussian.

    ``k11``, ``k22`` are variances and ``k12`` the covariance (broadcastable
    arrays).  Correlations pushed beyond ``[-1, 1]`` by round-off are clipped
    and counted in ``counter["clipped"]``.
    """
    k11, k12, k22 = np.broadcast_arrays(*(np.asarray(a, dtype=np.float64) for a in (k11, k12, k22)))
    s1, s2 = np.sqrt(np.maximum(k11, 0.0)), np.sqrt(np.maximum(k22, 0.0))
    den = s1 * s2
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = np.where(den > 0, k12 / np.where(den > 0, den, 1.0), 0.0)
    # a last-ulp excess (e.g. on the diagonal) is not worth reporting
    bad = np.abs(rho) > 1.0 + 1e-12
    if np.any(bad) and counter is not None:
        counter["clipped"] = counter.get("clipped", 0) + int(np.count_nonzero(bad))
    rho = np.clip(rho, -1.0, 1.0)
    comp = np.sqrt(1.0 - rho**2)
    if rule.method == "gauss_hermite":
        z, w = np.polynomial.hermite.hermgauss(rule.order)
        z = z * math.sqrt(2.0)
        w = w / math.sqrt(math.pi)
        z1, z2 = z[:, None], z[None, :]
        ww = w[:, None] * w[None, :]
        out = np.empty(k11.shape)
        for idx in np.ndindex(k11.shape):
            x = s1[idx] * z1
            y = s2[idx] * (rho[idx] * z1 + comp[idx] * z2)
            out[idx] = np.sum(ww * f(x) * g(y))
        return out
    rng = np.random.default_rng(rule.seed)
    z1 = rng.standard_normal(rule.samples)
    z2 = rng.standard_normal(rule.samples)
    out = np.empty(k11.shape)
    for idx in np.ndindex(k11.shape):
        x = s1[idx] * z1
        y = s2[idx] * (rho[idx] * z1 + comp[idx] * z2)
        out[idx] = np.mean(f(x) * g(y))
    return out


def _gram_expectation(f, g, sigma, rule, counter):
    diag = np.diag(sigma)
    return bivariate_expectation(f, g, diag[:, None], sigma, diag[None, :], rule, counter)


def _symmetrize(k):
    return 0.5 * (k + k.T)


def input_kernel(inputs) -> np.ndarray:
    x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    return x @ x.T + 1.0


def feature_kernel(inputs, spec: FeatureMapSpec, n_draws: int = 64) -> np.ndarray:
    """First-layer CK ``E[phi(x)^T phi(x') / d^1] + 1`` over the map's random draws.

    Random Fourier features use the closed form of the expectation over the
    Gaussian frequencies; other random families average ``n_draws`` seeds.
    """
    x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    if spec.family is Family.RANDOM_FOURIER:
        sq = np.sum((x[:, None, :] - x[None, :, :]) ** 2, axis=-1)
        return 0.5 * np.exp(-2.0 * math.pi**2 * spec.sigma**2 * sq) + 1.0
    deterministic = spec.family in (Family.IDENTITY, Family.BASIC_ENCODING,
                                    Family.POSITIONAL_ENCODING, Family.COMPLEX_GAUSSIAN)
    draws = 1 if deterministic else n_draws
    acc = np.zeros((len(x), len(x)))
    for k in range(draws):
        fmap = FeatureMap(spec.replace(seed=spec.seed + k), x.shape[1])
        phi = np.asarray(fmap(x))
        acc += phi @ phi.T / phi.shape[1]
    return _symmetrize(acc / draws) + 1.0


@dataclasses.dataclass
class KernelStack:
    sigma: list[KernelMatrix]
    sigma_dot: list[KernelMatrix]
    theta: list[KernelMatrix]
    clipped: int = 0


def propagate(inputs, spec: FeatureMapSpec, depth: int,
              rule: GaussianExpectationRule = GaussianExpectationRule(),
              activation: str = "tanh", n_draws: int = 64) -> KernelStack:
    """CK, CK-derivative and NTK matrices for layers ``0..depth``.

    The feature layer is frozen, so ``Sigma_dot^1 = 0`` for tanh and the NTK
    starts at ``Theta^1 = Sigma^1``.  With the identity activation every
    ``Sigma_dot^l`` is 1 and the recursion telescopes.
    """
    if depth < 1:
        raise KernelError("depth must be at least 1")
    if activation not in ACTIVATION_PAIRS:
        raise KernelError(f"unknown activation '{activation}'")
    act, dact = ACTIVATION_PAIRS[activation]
    counter: dict[str, int] = {}
    s0 = input_kernel(inputs)
    n = len(s0)
    sig = [s0, feature_kernel(inputs, spec, n_draws)]
    dots = [np.zeros((n, n)), np.ones((n, n)) if activation == "identity" else np.zeros((n, n))]
    for _ in range(2, depth + 1):
        prev = sig[-1]
        if activation == "identity":
            sig.append(prev + 1.0)
            dots.append(np.ones((n, n)))
        else:
            sig.append(_symmetrize(_gram_expectation(act, act, prev, rule, counter)) + 1.0)
            dots.append(_symmetrize(_gram_expectation(dact, dact, prev, rule, counter)))
    theta = [s0]
    for l in range(1, depth + 1):
        theta.append(theta[-1] * dots[l] + sig[l])
    return KernelStack([KernelMatrix(s, l, KernelKind.CK) for l, s in enumerate(sig)],
                       [KernelMatrix(s, l, KernelKind.CK_DERIVATIVE) for l, s in enumerate(dots)],
                       [KernelMatrix(t, l, KernelKind.NTK) for l, t in enumerate(theta)],
                       counter.get("clipped", 0))


def ck_propagate(inputs, spec: FeatureMapSpec, depth: int,
                 rule: GaussianExpectationRule = GaussianExpectationRule(),
                 activation: str = "tanh", n_draws: int = 64) -> list[KernelMatrix]:
    return propagate(inputs, spec, depth, rule, activation, n_draws).sigma


def ntk_propagate(inputs, spec: FeatureMapSpec, depth: int,
                  rule: GaussianExpectationRule = GaussianExpectationRule(),
                  activation: str = "tanh", n_draws: int = 64) -> list[KernelMatrix]:
    return propagate(inputs, spec, depth, rule, activation, n_draws).theta


def empirical_first_layer(inputs, fmap: FeatureMap, n_inits: int, seed: int) -> np.ndarray:
    """Second moment of ``f^1`` over ``n_inits`` draws of ``W^1, b^1`` (features fixed)."""
    phi = np.asarray(fmap(np.atleast_2d(inputs)))
    d = phi.shape[1]
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((n_inits, d))
    b = rng.standard_normal(n_inits)
    f = phi @ w.T / math.sqrt(d) + b          # (N, n_inits)
    return f @ f.T / n_inits


def empirical_ntk(params: MlpParams, fmap: FeatureMap | None, inputs,
                  blocks: Sequence[str] | None = None) -> KernelMatrix:
    """Gram matrix of parameter Jacobians of a scalar-output MLP.

    The MLP is evaluated with the ``1/sqrt(fan_in)`` scaling.  ``blocks``
    restricts the Jacobian to named parameter blocks (``W0``, ``b0``, ...).
    """
    if params.widths[-1] != 1:
        raise KernelError("empirical_ntk needs a scalar-output network")
    x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    h = x if fmap is None else np.asarray(fmap(x))
    ntk_params = dataclasses.replace(params, parameterization="ntk")
    names = list(params.as_dict()) if blocks is None else list(blocks)
    leaves = {k: (ad.variable(v) if k in names else v) for k, v in params.as_dict().items()}
    out = mlp_forward(ntk_params, h, leaves)
    rows = []
    for i in range(len(x)):
        seed = np.zeros(out.value.shape)
        seed[i, 0] = 1.0
        ad.backward(out, seed)
        rows.append(np.concatenate([np.ravel(leaves[k].adjoint) if leaves[k].adjoint is not None
                                    else np.zeros(leaves[k].value.size) for k in names]))
    jac = np.stack(rows)
    return KernelMatrix(_symmetrize(jac @ jac.T), len(params.weights), KernelKind.EMPIRICAL)


def relative_frobenius(a, b) -> float:
    a = a.entries if isinstance(a, KernelMatrix) else np.asarray(a)
    b = b.entries if isinstance(b, KernelMatrix) else np.asarray(b)
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


# --------------------------------------------------------------------------- spectra


def sym_eig(matrix, tol: float = 1e-12, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi eigen-decomposition of a symmetric matrix.

    Returns eigenvalues in descending order and eigenvectors as columns.
    """
    a = np.array(matrix.entries if isinstance(matrix, KernelMatrix) else matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise KernelError("sym_eig needs a square matrix")
    n = a.shape[0]
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if np.max(np.abs(a - a.T), initial=0.0) > 1e-8 * scale:
        raise KernelError("sym_eig needs a symmetric matrix")
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    for _ in range(max_sweeps):
        # summed directly; total minus diagonal cancels catastrophically
        off = float(np.linalg.norm(a - np.diag(np.diag(a))))
        if off < tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) < 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta      # theta^2 would overflow
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                ap, aq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap, aq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], v[:, order]


@dataclasses.dataclass
class DecayPrediction:
    t: np.ndarray
    eigenvalues: np.ndarray
    modes: np.ndarray        # (len(t), N): exp(-lambda_i t) * q_i^T targets
    total: np.ndarray        # (len(t), N): -Q exp(-Lambda t) Q^T targets


def spectral_decay_predict(ntk, targets, t: Sequence[float]) -> DecayPrediction:
    """Per-eigenmode training error of linear kernel regression under gradient flow."""
    k = ntk.entries if isinstance(ntk, KernelMatrix) else np.asarray(ntk, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64).reshape(-1)
    if k.shape != (y.size, y.size):
        raise KernelError(f"kernel shape {k.shape} does not match {y.size} targets")
    lam, q = sym_eig(k)
    proj = q.T @ y
    ts = np.asarray(t, dtype=np.float64).reshape(-1)
    decay = np.exp(-np.outer(ts, lam))
    modes = decay * proj[None, :]
    total = -(modes @ q.T)
    return DecayPrediction(ts, lam, modes, total)


def fourier_composed_kernel(amplitudes, frequencies, x, x_prime) -> float:
    """``sum_k A_k^2 cos(2 pi b_k . (x - x'))``."""
    a = np.asarray(amplitudes, dtype=np.float64).reshape(-1)
    b = np.atleast_2d(np.asarray(frequencies, dtype=np.float64))
    delta = np.asarray(x, dtype=np.float64).reshape(-1) - np.asarray(x_prime, dtype=np.float64).reshape(-1)
    if b.shape != (a.size, delta.size):
        raise KernelError(f"frequencies shape {b.shape} does not match ({a.size}, {delta.size})")
    return float(np.sum(a**2 * np.cos(2.0 * math.pi * (b @ delta))))


def fourier_features(amplitudes, frequencies, x) -> np.ndarray:
    """Explicit ``[A cos(2 pi B x), A sin(2 pi B x)]`` vector."""
    a = np.asarray(amplitudes, dtype=np.float64).reshape(-1)
    arg = 2.0 * math.pi * (np.atleast_2d(frequencies) @ np.asarray(x, dtype=np.float64).reshape(-1))
    return np.concatenate([a * np.cos(arg), a * np.sin(arg)])


# --------------------------------------------------------------------------- surjectivity


def injective_sine(b) -> np.ndarray:
    """Whether ``x -> sin(2 pi b x)`` is one-to-one on ``[0, 1]``.

    The argument sweeps ``[0, 2 pi |b|]`` and sine is monotone from 0 only up
    to a quarter period, so the map is injective exactly when ``|b| <= 1/4``.
    """
    return np.abs(np.asarray(b, dtype=np.float64)) <= 0.25


def surjectivity_bound(sigma: float) -> float:
    if not sigma > 0:
        raise KernelError("sigma must be positive")
    return 0.5 * float(special.erf(1.0 / (math.sqrt(2.0) * sigma)))


def surjectivity_estimate(sigma: float, n_samples: int, seed: int) -> tuple[float, float]:
    """Monte-Carlo probability that a Gaussian frequency gives an injective sine,
    together with the analytic bound ``erf(1/(sqrt(2) sigma)) / 2``.

    The bound holds for ``sigma`` above roughly 0.4; narrower Gaussians
    exceed it because most of their mass lies inside ``|b| <= 1/4``."""
    if not sigma > 0:
        raise KernelError("sigma must be positive")
    if n_samples < 1000:
        raise KernelError("n_samples must be at least 1000")
    b = np.random.default_rng(seed).normal(0.0, sigma, n_samples)
    return float(np.mean(injective_sine(b))), surjectivity_bound(sigma)


# --------------------------------------------------------------------------- export


def write_spectrum_csv(path, eigenvalues) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "eigenvalue"])
        for i, v in enumerate(np.asarray(eigenvalues).reshape(-1)):
            w.writerow([i, repr(float(v))])


def write_decay_csv(path, prediction: DecayPrediction) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "mode_index", "predicted_error"])
        for ti, t in enumerate(prediction.t):
            for i in range(prediction.modes.shape[1]):
                w.writerow([repr(float(t)), i, repr(float(prediction.modes[ti, i]))])
