"""Benchmark problem registry: operators, geometry, samplers and references.

Coordinates are ordered spatial first, time last.  A network closure maps a
:class:`~featpinn.autodiff.Jet` of points to a jet of outputs of shape
``(N, out_dim)``; residuals read derivatives off that jet.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import autodiff as ad

BURGERS_NU = 0.01 / math.pi
LORENZ_TRUE = {"alpha": 10.0, "rho": 15.0, "beta": 8.0 / 3.0}
LORENZ_X0 = (0.0, 1.0, 1.05)
HEAT_DECAY = (20.0 * math.pi) ** 2 / (500.0 * math.pi) ** 2 + 1.0
POISSON2D_HOLES = ((0.3, 0.3), (-0.3, 0.3), (0.3, -0.3), (-0.3, -0.3))
POISSON2D_RADIUS = 0.1
GATE_TOL = 1e-8
DOMAIN_TOL = 1e-12


class ProblemError(ValueError):
    """Unknown problem or invalid problem options."""


class DomainError(ValueError):
    """A point lies outside the declared set."""


class GeometryError(ValueError):
    """The requested geometry cannot be sampled."""


class UnsupportedError(NotImplementedError):
    """The problem has no closed-form solution."""


class BlowUpError(FloatingPointError):
    def __init__(self, step: int):
        super().__init__(f"integrator state became non-finite at step {step}")
        self.step = step


class Fields:
    """Read-only view of an output jet: values and per-coordinate derivatives."""

    def __init__(self, out: ad.Jet, n_dirs: int):
        if not isinstance(out, ad.Jet):
            out = ad.Jet(out)
        self.jet = out
        self.n_dirs = n_dirs

    def u(self, k: int = 0):
        return ad.getitem(self.jet.v, (slice(None), k))

    def d(self, k: int, j: int):
        if self.jet.d1 is None:
            return 0.0
        return ad.getitem(self.jet.d1, (j, slice(None), k))

    def dd(self, k: int, j: int):
        if self.jet.d2 is None:
            return 0.0
        return ad.getitem(self.jet.d2, (j, slice(None), k))


def _stack(cols):
    n = None
    for c in cols:
        v = ad.constant_value(c)
        if v.ndim:
            n = v.shape[0]
            break
    parts = [ad.reshape(c, (n, 1)) if ad.constant_value(c).ndim else np.full((n, 1), float(c))
             for c in cols]
    return parts[0] if len(parts) == 1 else ad.concatenate(parts, axis=-1)


# --------------------------------------------------------------------------- problem type


@dataclasses.dataclass(frozen=True)
class PdeProblem:
    name: str
    bounds: np.ndarray                  # (dims, 2), time last when time_dependent
    time_dependent: bool
    out_dim: int
    pde: Callable                       # (Fields, x, coeffs) -> list of residual columns
    ic: Callable | None = None          # (Fields, x) -> list of mismatch columns
    bc: Callable | None = None          # (Fields, x, labels) -> list of mismatch columns
    solution: Callable | None = None    # x -> (N, out_dim), written with autodiff ops
    coeffs: Mapping[str, float] = dataclasses.field(default_factory=dict)
    constants: Mapping[str, float] = dataclasses.field(default_factory=dict)
    sample_interior: Callable | None = None
    sample_boundary: Callable | None = None
    contains: Callable | None = None
    residual_points_scale: float = 1.0  # interior count multiplier ("uneven" sampling)
    description: str = ""

    @property
    def dims(self) -> int:
        return self.bounds.shape[0]

    @property
    def spatial_dims(self) -> int:
        return self.dims - 1 if self.time_dependent else self.dims

    @property
    def is_inverse(self) -> bool:
        return bool(self.coeffs)

    def in_domain(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        ok = np.all((x >= lo - DOMAIN_TOL) & (x <= hi + DOMAIN_TOL), axis=1)
        if self.contains is not None:
            ok &= self.contains(x)
        return ok


@dataclasses.dataclass
class SampleBatch:
    x_r: np.ndarray
    x_ic: np.ndarray
    x_bc: np.ndarray
    bc_labels: np.ndarray

    def counts(self) -> tuple[int, int, int]:
        return len(self.x_r), len(self.x_ic), len(self.x_bc)


# --------------------------------------------------------------------------- operations


def _fields(u_fn: Callable, x: np.ndarray) -> Fields:
    return Fields(u_fn(ad.seed_jet(x)), x.shape[1])


def residual(problem: PdeProblem, u_fn: Callable, points, coeffs: Mapping | None = None):
    """Residual columns ``(N, k)`` of the governing operator at interior points."""
    x = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if x.shape[1] != problem.dims:
        raise DomainError(f"{problem.name} expects {problem.dims} coordinates, got {x.shape[1]}")
    if not np.all(problem.in_domain(x)):
        raise DomainError(f"point outside the {problem.name} domain")
    c = dict(problem.coeffs)
    if coeffs:
        c.update(coeffs)
    return _stack(problem.pde(_fields(u_fn, x), x, c))


def ic_residual(problem: PdeProblem, u_fn: Callable, x_ic):
    x = np.atleast_2d(np.asarray(x_ic, dtype=np.float64))
    if problem.ic is None or len(x) == 0:
        return None
    return _stack(problem.ic(_fields(u_fn, x), x))


def bc_residual(problem: PdeProblem, u_fn: Callable, x_bc, labels):
    x = np.atleast_2d(np.asarray(x_bc, dtype=np.float64))
    if problem.bc is None or len(x) == 0:
        return None
    return _stack(problem.bc(_fields(u_fn, x), x, np.asarray(labels)))


def analytical_solution(problem: PdeProblem, point) -> np.ndarray | float:
    if problem.solution is None:
        raise UnsupportedError(f"{problem.name} has no closed-form solution")
    x = np.asarray(point, dtype=np.float64)
    single = x.ndim == 1
    u = np.asarray(problem.solution(np.atleast_2d(x)))
    if single:
        return float(u[0, 0]) if problem.out_dim == 1 else u[0]
    return u


def _uniform_box(rng, bounds, n):
    return rng.uniform(bounds[:, 0], bounds[:, 1], (n, bounds.shape[0]))


def _box_faces(rng, bounds, n):
    """Uniform points on the faces of a box, picked face-area proportional."""
    d = bounds.shape[0]
    span = bounds[:, 1] - bounds[:, 0]
    if d == 1:
        sides = rng.integers(0, 2, n)
        return bounds[0, sides][:, None].astype(np.float64)
    areas = np.array([np.prod(np.delete(span, j)) for j in range(d)])
    face = rng.choice(d, size=n, p=areas / areas.sum())
    side = rng.integers(0, 2, n)
    pts = _uniform_box(rng, bounds, n)
    pts[np.arange(n), face] = bounds[face, side]
    return pts


def sample_domain(problem: PdeProblem, n_r: int, n_ic: int, n_bc: int, seed: int) -> SampleBatch:
    """Uniform random collocation, initial and boundary points."""
    if min(n_r, n_ic, n_bc) < 0:
        raise ValueError("sample counts must be non-negative")
    rng = np.random.default_rng(seed)
    n_r = int(n_r * problem.residual_points_scale) if problem.residual_points_scale != 1.0 else n_r
    if problem.sample_interior is not None:
        x_r = problem.sample_interior(rng, n_r)
    else:
        x_r = _uniform_box(rng, problem.bounds, n_r)
    if problem.time_dependent and problem.ic is not None:
        x_ic = _uniform_box(rng, problem.bounds, n_ic)
        x_ic[:, -1] = problem.bounds[-1, 0]
    else:
        x_ic = np.zeros((0, problem.dims))
    if problem.bc is None:
        x_bc, labels = np.zeros((0, problem.dims)), np.zeros(0, dtype=np.int64)
    elif problem.sample_boundary is not None:
        x_bc, labels = problem.sample_boundary(rng, n_bc)
    else:
        space = problem.bounds[:problem.spatial_dims]
        xs = _box_faces(rng, space, n_bc)
        if problem.time_dependent:
            t = rng.uniform(problem.bounds[-1, 0], problem.bounds[-1, 1], (n_bc, 1))
            xs = np.concatenate([xs, t], axis=1)
        x_bc, labels = xs, np.zeros(n_bc, dtype=np.int64)
    return SampleBatch(x_r, x_ic, x_bc, labels)


def lorenz_rhs(state, coeffs: Mapping[str, float] | Sequence[float]) -> np.ndarray:
    if isinstance(coeffs, Mapping):
        a, r, b = coeffs["alpha"], coeffs["rho"], coeffs["beta"]
    else:
        a, r, b = coeffs
    x, y, z = state
    return np.array([a * (y - x), x * (r - z) - y, x * y - b * z])


def integrate_lorenz(coeffs, x0, dt: float, steps: int) -> np.ndarray:
    """Classical RK4 trajectory of shape ``(steps + 1, 3)``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    traj = np.empty((steps + 1, 3))
    traj[0] = np.asarray(x0, dtype=np.float64)
    s = traj[0].copy()
    with np.errstate(all="ignore"):
        for i in range(steps):
            k1 = lorenz_rhs(s, coeffs)
            k2 = lorenz_rhs(s + 0.5 * dt * k1, coeffs)
            k3 = lorenz_rhs(s + 0.5 * dt * k2, coeffs)
            k4 = lorenz_rhs(s + dt * k3, coeffs)
            s = s + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(s)):
                raise BlowUpError(i + 1)
            traj[i + 1] = s
    return traj


def self_consistency(problem: PdeProblem, n_points: int = 100, seed: int = 0) -> float:
    """Largest |residual| of the closed-form solution at random interior points."""
    if problem.solution is None:
        raise UnsupportedError(f"{problem.name} has no closed-form solution")
    rng = np.random.default_rng(seed)
    if problem.sample_interior is not None:
        x = problem.sample_interior(rng, n_points)
    else:
        x = _uniform_box(rng, problem.bounds, n_points)
    r = residual(problem, problem.solution, x)
    return float(np.max(np.abs(ad.constant_value(r))))


# --------------------------------------------------------------------------- definitions

PI = math.pi


def _col(x, j):
    return ad.getitem(x, (slice(None), slice(j, j + 1)))


def _wave_solution(x):
    xs, t = _col(x, 0), _col(x, 1)
    return ad.add(ad.mul(ad.sin(ad.mul(PI, xs)), ad.cos(ad.mul(2 * PI, t))),
                  ad.mul(0.5, ad.mul(ad.sin(ad.mul(4 * PI, xs)), ad.cos(ad.mul(8 * PI, t)))))


def _wave() -> PdeProblem:
    def pde(F, x, c):
        return [ad.sub(F.dd(0, 1), ad.mul(4.0, F.dd(0, 0)))]

    def ic(F, x):
        g = np.sin(PI * x[:, 0]) + 0.5 * np.sin(4 * PI * x[:, 0])
        return [ad.sub(F.u(0), g), F.d(0, 1)]

    def bc(F, x, labels):
        return [F.u(0)]

    return PdeProblem("wave", np.array([[0.0, 1.0], [0.0, 1.0]]), True, 1, pde, ic, bc,
                      solution=_wave_solution,
                      description="u_tt - 4 u_xx = 0 on [0,1]x[0,1]")


def _diffusion_solution(x):
    return ad.mul(ad.exp(ad.neg(_col(x, 1))), ad.sin(ad.mul(PI, _col(x, 0))))


def _diffusion() -> PdeProblem:
    # forcing sign chosen so that exp(-t) sin(pi x) is an exact solution
    def pde(F, x, c):
        s = np.sin(PI * x[:, 0]) * np.exp(-x[:, 1])
        return [ad.add(ad.sub(F.d(0, 1), F.dd(0, 0)), s * (1.0 - PI**2))]

    def ic(F, x):
        return [ad.sub(F.u(0), np.sin(PI * x[:, 0]))]

    def bc(F, x, labels):
        return [F.u(0)]

    return PdeProblem("diffusion", np.array([[-1.0, 1.0], [0.0, 1.0]]), True, 1, pde, ic, bc,
                      solution=_diffusion_solution,
                      description="u_t - u_xx + exp(-t)(1 - pi^2) sin(pi x) = 0 on [-1,1]x[0,1]")


def heat_mode(x) -> np.ndarray:
    """Exact separable solution of the heat benchmark (reference data only)."""
    x = np.atleast_2d(x)
    return (np.exp(-HEAT_DECAY * x[:, 2]) * np.sin(20 * PI * x[:, 0])
            * np.sin(PI * x[:, 1]))[:, None]


def _heat() -> PdeProblem:
    kx, ky = 1.0 / (500.0 * PI) ** 2, 1.0 / PI**2

    def pde(F, x, c):
        return [ad.sub(ad.sub(F.d(0, 2), ad.mul(kx, F.dd(0, 0))), ad.mul(ky, F.dd(0, 1)))]

    def ic(F, x):
        return [ad.sub(F.u(0), np.sin(20 * PI * x[:, 0]) * np.sin(PI * x[:, 1]))]

    def bc(F, x, labels):
        return [F.u(0)]

    return PdeProblem("heat", np.array([[0.0, 1.0], [0.0, 1.0], [0.0, 5.0]]), True, 1,
                      pde, ic, bc, description="u_t - u_xx/(500 pi)^2 - u_yy/pi^2 = 0")


def _outside_holes(x):
    ok = np.ones(len(x), dtype=bool)
    for cx, cy in POISSON2D_HOLES:
        ok &= (x[:, 0] - cx) ** 2 + (x[:, 1] - cy) ** 2 > POISSON2D_RADIUS**2
    return ok


def _rejection(rng, bounds, n, keep, max_rounds=1000):
    out, have = [], 0
    for _ in range(max_rounds):
        if have >= n:
            break
        cand = _uniform_box(rng, bounds, max(2 * (n - have), 16))
        cand = cand[keep(cand)]
        out.append(cand)
        have += len(cand)
    else:
        if have < n:
            raise GeometryError("rejection sampler could not find interior points")
    if n == 0:
        return np.zeros((0, bounds.shape[0]))
    return np.concatenate(out)[:n]


def _poisson2d() -> PdeProblem:
    bounds = np.array([[-0.5, 0.5], [-0.5, 0.5]])

    def pde(F, x, c):
        return [ad.neg(ad.add(F.dd(0, 0), F.dd(0, 1)))]

    def bc(F, x, labels):
        return [ad.sub(F.u(0), (labels == 0).astype(np.float64))]

    def boundary(rng, n):
        outer, holes = 4.0, 4 * 2 * PI * POISSON2D_RADIUS
        on_outer = rng.uniform(size=n) < outer / (outer + holes)
        pts = _box_faces(rng, bounds, n)
        k = int(np.count_nonzero(~on_outer))
        centers = np.asarray(POISSON2D_HOLES)[rng.integers(0, 4, k)]
        ang = rng.uniform(0, 2 * PI, k)
        pts[~on_outer] = centers + POISSON2D_RADIUS * np.stack([np.cos(ang), np.sin(ang)], 1)
        return pts, np.where(on_outer, 0, 1).astype(np.int64)

    return PdeProblem("poisson2d", bounds, False, 1, pde, None, bc,
                      sample_interior=lambda rng, n: _rejection(rng, bounds, n, _outside_holes),
                      sample_boundary=boundary,
                      contains=lambda x: _outside_holes(x) | _on_hole(x),
                      description="-lap u = 0 on a square with four holes")


def _on_hole(x):
    on = np.zeros(len(x), dtype=bool)
    for cx, cy in POISSON2D_HOLES:
        r = np.hypot(x[:, 0] - cx, x[:, 1] - cy)
        on |= np.abs(r - POISSON2D_RADIUS) <= 1e-9
    return on


def _burgers_pde(F, x, c):
    u = F.u(0)
    return [ad.sub(ad.add(F.d(0, 1), ad.mul(c.get("mu1", 1.0), ad.mul(u, F.d(0, 0)))),
                   ad.mul(c.get("mu2", BURGERS_NU), F.dd(0, 0)))]


def _burgers(inverse: bool = False) -> PdeProblem:
    def ic(F, x):
        return [ad.add(F.u(0), np.sin(PI * x[:, 0]))]

    def bc(F, x, labels):
        return [F.u(0)]

    coeffs = {"mu1": 1.0, "mu2": BURGERS_NU} if inverse else {}
    return PdeProblem("burgers_inverse" if inverse else "burgers",
                      np.array([[-1.0, 1.0], [0.0, 1.0]]), True, 1, _burgers_pde, ic, bc,
                      coeffs=coeffs, constants={"nu": BURGERS_NU},
                      description="u_t + mu1 u u_x = mu2 u_xx" if inverse
                      else "u_t + u u_x = nu u_xx, nu = 0.01/pi")


def _ns_contains(x):
    return ~((x[:, 0] < 2.0) & (x[:, 1] > 1.0))


NS_INLET, NS_OUTLET, NS_WALL = 0, 1, 2


def _navier_stokes() -> PdeProblem:
    bounds = np.array([[0.0, 4.0], [0.0, 2.0]])
    re = 100.0

    def pde(F, x, c):
        u, v = F.u(0), F.u(1)
        cont = ad.add(F.d(0, 0), F.d(1, 1))
        mx = ad.sub(ad.add(ad.add(ad.mul(u, F.d(0, 0)), ad.mul(v, F.d(0, 1))), F.d(2, 0)),
                    ad.mul(1.0 / re, ad.add(F.dd(0, 0), F.dd(0, 1))))
        my = ad.sub(ad.add(ad.add(ad.mul(u, F.d(1, 0)), ad.mul(v, F.d(1, 1))), F.d(2, 1)),
                    ad.mul(1.0 / re, ad.add(F.dd(1, 0), F.dd(1, 1))))
        return [cont, mx, my]

    def bc(F, x, labels):
        inlet = labels == NS_INLET
        outlet = labels == NS_OUTLET
        wall = labels == NS_WALL
        u_in = 4.0 * x[:, 1] * (1.0 - x[:, 1])
        vel = inlet | wall
        return [ad.where(vel, ad.sub(F.u(0), np.where(inlet, u_in, 0.0)), 0.0),
                ad.where(vel, F.u(1), 0.0),
                ad.where(outlet, F.u(2), 0.0)]

    # (x0, y0, x1, y1, label) segments of the back-step outline
    segments = [(0, 0, 0, 1, NS_INLET), (4, 0, 4, 2, NS_OUTLET), (0, 0, 4, 0, NS_WALL),
                (2, 2, 4, 2, NS_WALL), (0, 1, 2, 1, NS_WALL), (2, 1, 2, 2, NS_WALL)]

    def boundary(rng, n):
        seg = np.array(segments, dtype=np.float64)
        length = np.hypot(seg[:, 2] - seg[:, 0], seg[:, 3] - seg[:, 1])
        pick = rng.choice(len(seg), size=n, p=length / length.sum())
        s = rng.uniform(size=n)[:, None]
        pts = seg[pick, :2] + s * (seg[pick, 2:4] - seg[pick, :2])
        return pts, seg[pick, 4].astype(np.int64)

    return PdeProblem("navier_stokes", bounds, False, 3, pde, None, bc,
                      constants={"Re": re},
                      sample_interior=lambda rng, n: _rejection(rng, bounds, n, _ns_contains),
                      sample_boundary=boundary, contains=_ns_contains,
                      description="steady incompressible flow over a back step, Re = 100")


def _poisson_nd(dim: int = 2, uneven: bool = False) -> PdeProblem:
    if dim < 1:
        raise ProblemError("poisson_nd needs dim >= 1")
    bounds = np.tile([0.0, 1.0], (dim, 1))

    def solution(x):
        return ad.reshape(ad.sum_(ad.sin(ad.mul(0.5 * PI, x)), axis=-1), (-1, 1))

    def pde(F, x, c):
        lap = F.dd(0, 0)
        for j in range(1, dim):
            lap = ad.add(lap, F.dd(0, j))
        force = (PI**2 / 4.0) * np.sum(np.sin(0.5 * PI * x), axis=1)
        return [ad.sub(ad.neg(lap), force)]

    def bc(F, x, labels):
        return [ad.sub(F.u(0), np.sum(np.sin(0.5 * PI * x), axis=1))]

    return PdeProblem("poisson_nd", bounds, False, 1, pde, None, bc, solution=solution,
                      constants={"dim": dim},
                      residual_points_scale=1.0 / dim if uneven else 1.0,
                      description=f"-lap u = pi^2/4 sum sin(pi x_i / 2) on [0,1]^{dim}")


def _lorenz() -> PdeProblem:
    def pde(F, x, c):
        X, Y, Z = F.u(0), F.u(1), F.u(2)
        return [ad.sub(F.d(0, 0), ad.mul(c["alpha"], ad.sub(Y, X))),
                ad.sub(F.d(1, 0), ad.sub(ad.mul(X, ad.sub(c["rho"], Z)), Y)),
                ad.sub(F.d(2, 0), ad.sub(ad.mul(X, Y), ad.mul(c["beta"], Z)))]

    def ic(F, x):
        return [ad.sub(F.u(k), LORENZ_X0[k]) for k in range(3)]

    return PdeProblem("lorenz_inverse", np.array([[0.0, 3.0]]), True, 3, pde, ic, None,
                      coeffs=dict(LORENZ_TRUE),
                      description="Lorenz system with unknown alpha, rho, beta")


_FACTORIES: dict[str, Callable[..., PdeProblem]] = {
    "wave": _wave,
    "diffusion": _diffusion,
    "heat": _heat,
    "poisson2d": _poisson2d,
    "burgers": _burgers,
    "navier_stokes": _navier_stokes,
    "poisson_nd": _poisson_nd,
    "burgers_inverse": lambda: _burgers(inverse=True),
    "lorenz_inverse": _lorenz,
}

PROBLEM_NAMES = tuple(_FACTORIES)


def get_problem(name: str, **options) -> PdeProblem:
    """Build a registered problem; closed-form solutions are gated on load."""
    if name not in _FACTORIES:
        raise ProblemError(f"unknown problem '{name}'")
    try:
        problem = _FACTORIES[name](**options)
    except TypeError as exc:
        raise ProblemError(f"invalid options for {name}: {exc}") from None
    if problem.solution is not None:
        err = self_consistency(problem)
        if err > GATE_TOL:
            raise ProblemError(f"{name}: closed-form solution fails its own operator ({err:.2e})")
    return problem


# --------------------------------------------------------------------------- references


def burgers_reference(x, t, nu: float = BURGERS_NU, order: int = 200) -> np.ndarray:
    """Exact viscous Burgers solution for ``u(x, 0) = -sin(pi x)`` via Cole-Hopf.

    The heat-kernel convolution is evaluated with Gauss-Hermite quadrature;
    the largest exponent is subtracted before exponentiating.
    """
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    shape = np.broadcast_shapes(x.shape, t.shape)
    x, t = (np.broadcast_to(a, shape).ravel() for a in (x, t))
    z, w = np.polynomial.hermite.hermgauss(order)
    out = -np.sin(PI * x)
    live = t > 0
    xl, tl = x[live][:, None], t[live][:, None]
    y = xl - np.sqrt(4.0 * nu * tl) * z[None, :]
    expo = -np.cos(PI * y) / (2.0 * PI * nu)
    expo -= expo.max(axis=1, keepdims=True)
    f = w[None, :] * np.exp(expo)
    out[live] = -np.sum(np.sin(PI * y) * f, axis=1) / np.sum(f, axis=1)
    return out.reshape(shape)


def poisson2d_reference(n: int = 201) -> tuple[np.ndarray, np.ndarray]:
    """Five-point finite-difference solve on an ``n x n`` grid (hole nodes fixed at 0)."""
    from scipy.sparse import lil_matrix
    from scipy.sparse.linalg import spsolve

    g = np.linspace(-0.5, 0.5, n)
    X, Y = np.meshgrid(g, g, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel()], 1)
    in_hole = ~_outside_holes(pts)
    border = (np.abs(np.abs(pts[:, 0]) - 0.5) < 1e-12) | (np.abs(np.abs(pts[:, 1]) - 0.5) < 1e-12)
    fixed = in_hole | border
    values = np.where(border, 1.0, 0.0)
    free = np.flatnonzero(~fixed)
    index = -np.ones(n * n, dtype=np.int64)
    index[free] = np.arange(len(free))
    A = lil_matrix((len(free), len(free)))
    b = np.zeros(len(free))
    for row, p in enumerate(free):
        i, j = divmod(p, n)
        A[row, row] = 4.0
        for q in (p - n, p + n, p - 1, p + 1):
            if index[q] >= 0:
                A[row, index[q]] = -1.0
            else:
                b[row] += values[q]
    values[free] = spsolve(A.tocsr(), b)
    keep = ~in_hole | _on_hole(pts)
    return pts[keep], values[keep][:, None]


def reference_grid(problem: PdeProblem, n: int = 101, t_samples: int | None = None,
                   path: str | Path | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Evaluation points and reference values for a problem.

    Closed forms are used where they exist; Burgers uses the Cole-Hopf
    quadrature, heat its exact separable mode and Poisson2D a finite-difference
    solve.  Any problem may instead read a reference CSV from ``path``.
    """
    if path is not None:
        return load_reference_csv(path, problem.dims)
    name = problem.name
    if name == "lorenz_inverse":
        t = np.linspace(0.0, 3.0, n)
        steps = (n - 1) * 100
        traj = integrate_lorenz(LORENZ_TRUE, LORENZ_X0, 3.0 / steps, steps)[::100]
        return t[:, None], traj
    if name == "poisson2d":
        return poisson2d_reference(n)
    if name == "navier_stokes":
        raise UnsupportedError("navier_stokes needs a reference CSV (pass path=...)")
    if problem.dims > 3 or (problem.dims == 3 and n > 41):
        # dense grids explode with dimension; use a fixed random cloud instead
        pts = np.random.default_rng(12345).uniform(problem.bounds[:, 0], problem.bounds[:, 1],
                                                   (n * n, problem.dims))
    else:
        axes = [np.linspace(lo, hi, n) for lo, hi in problem.bounds]
        if t_samples is not None and problem.time_dependent:
            axes[-1] = np.linspace(*problem.bounds[-1], t_samples)
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], 1)
    if problem.solution is not None:
        return pts, np.asarray(problem.solution(pts))
    if name in ("burgers", "burgers_inverse"):
        return pts, burgers_reference(pts[:, 0], pts[:, 1])[:, None]
    if name == "heat":
        return pts, heat_mode(pts)
    raise UnsupportedError(f"no reference available for {name}")


def write_reference_csv(path, points: np.ndarray, values: np.ndarray) -> None:
    points = np.atleast_2d(points)
    values = np.asarray(values).reshape(len(points), -1)
    header = [f"dim{j}" for j in range(points.shape[1])] + [f"u{k}" for k in range(values.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for p, v in zip(points, values):
            w.writerow([repr(float(a)) for a in p] + [repr(float(a)) for a in v])


def load_reference_csv(path, dims: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        header = next(csv.reader(fh))
    n_dims = sum(1 for h in header if h.startswith("dim"))
    if dims is not None and n_dims != dims:
        raise DomainError(f"reference file has {n_dims} coordinates, expected {dims}")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, :n_dims], data[:, n_dims:]
