"""Feature-mapping first layers: Fourier-type, complex and RBF families.

Every map acts on inputs already normalised to the unit box ``[0, 1]^d``.
Inputs may be arrays of shape ``(N, d)``, tape nodes, or jets; parameters
live in a plain dict so the training loop can swap in tape variables.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from typing import Any, Mapping

import numpy as np

from . import autodiff as ad

# Centers are drawn from N(0, 1) and mapped affinely into the unit box with
# this spread, so roughly 95% of them land inside the domain.
CENTER_SPREAD = 0.25
COMPLEX_GAUSSIAN_CAP = 4096
EMPTY_SUPPORT_EPS = 1e-12


class SpecError(ValueError):
    """Invalid feature-map description."""


class Family(str, enum.Enum):
    IDENTITY = "identity"
    BASIC_ENCODING = "basic_encoding"
    POSITIONAL_ENCODING = "positional_encoding"
    RANDOM_FOURIER = "random_fourier"
    SINUSOIDAL = "sinusoidal"
    COMPLEX_TRIANGLE = "complex_triangle"
    COMPLEX_GAUSSIAN = "complex_gaussian"
    RBF_INT = "rbf_int"
    RBF_COMPACT = "rbf_compact"
    RBF_POLY = "rbf_poly"
    RBF_SURJECTIVE = "rbf_surjective"


class RbfKind(str, enum.Enum):
    GAUSSIAN = "gaussian"
    CUBIC = "cubic"
    THIN_PLATE_SPLINE = "thin_plate_spline"
    MULTIQUADRIC = "multiquadric"
    INVERSE_MULTIQUADRIC = "inverse_multiquadric"


FOURIER_FAMILIES = frozenset({Family.BASIC_ENCODING, Family.POSITIONAL_ENCODING,
                              Family.RANDOM_FOURIER, Family.SINUSOIDAL})
COMPLEX_FAMILIES = frozenset({Family.COMPLEX_TRIANGLE, Family.COMPLEX_GAUSSIAN})
RBF_FAMILIES = frozenset({Family.RBF_INT, Family.RBF_COMPACT, Family.RBF_POLY,
                          Family.RBF_SURJECTIVE})


@dataclasses.dataclass(frozen=True)
class FeatureMapSpec:
    family: Family = Family.IDENTITY
    m: int = 128
    sigma: float = 1.0
    rbf_kind: RbfKind = RbfKind.GAUSSIAN
    xi: float | None = None
    gamma: float | None = None
    p_terms: int = 0
    seed: int = 0

    def __post_init__(self):
        try:
            object.__setattr__(self, "family", Family(self.family))
            object.__setattr__(self, "rbf_kind", RbfKind(self.rbf_kind))
        except ValueError as exc:
            raise SpecError(str(exc)) from None
        if isinstance(self.m, bool) or int(self.m) != self.m or self.m < 1:
            raise SpecError(f"feature count m must be a positive integer, got {self.m!r}")
        if not self.sigma > 0:
            raise SpecError(f"sigma must be positive, got {self.sigma!r}")
        if self.p_terms < 0:
            raise SpecError(f"p_terms must be non-negative, got {self.p_terms!r}")
        if self.xi is not None and not self.xi > 0:
            raise SpecError(f"xi must be positive, got {self.xi!r}")
        if self.gamma is not None and not self.gamma > 0:
            raise SpecError(f"gamma must be positive, got {self.gamma!r}")
        if self.family is Family.RBF_COMPACT and self.xi is None:
            raise SpecError("rbf_compact requires xi")
        if self.family is Family.RBF_SURJECTIVE and self.gamma is None:
            raise SpecError("rbf_surjective requires gamma")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["family"] = self.family.value
        d["rbf_kind"] = self.rbf_kind.value
        return d

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "FeatureMapSpec":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise SpecError(f"unknown feature_map key: {unknown[0]}")
        return cls(**dict(data))

    def replace(self, **changes) -> "FeatureMapSpec":
        return dataclasses.replace(self, **changes)


# --------------------------------------------------------------------------- kernels


def rbf_profile(kind: RbfKind, sq_dist, sigma: float = 1.0):
    """Radial function evaluated from squared distances.

    Gaussian ``exp(-r^2/sigma^2)``, cubic ``r^3``, thin-plate ``r^2 log r``
    (zero at ``r = 0``), multiquadric ``sqrt(1+r^2)``, inverse multiquadric
    ``1/sqrt(1+r^2)``.
    """
    kind = RbfKind(kind)
    s = sq_dist
    if kind is RbfKind.GAUSSIAN:
        return ad.exp(ad.mul(s, -1.0 / sigma**2))
    if kind is RbfKind.CUBIC:
        return ad.power(s, 1.5)
    if kind is RbfKind.THIN_PLATE_SPLINE:
        pos = ad.constant_value(s) > 0
        return ad.mul(0.5, ad.mul(s, ad.where(pos, ad.log(ad.where(pos, s, 1.0)), 0.0)))
    if kind is RbfKind.MULTIQUADRIC:
        return ad.sqrt(ad.add(s, 1.0))
    return ad.power(ad.add(s, 1.0), -0.5)


def squared_distances(x, centers):
    """``|x_n - c_i|^2`` as an ``(N, m)`` array, clipped at zero."""
    xx = ad.sum_(ad.mul(x, x), axis=-1)
    cc = ad.sum_(ad.mul(centers, centers), axis=-1)
    n = ad.constant_value(x).shape[0]
    s = ad.add(ad.reshape(xx, (n, 1)), ad.mul(-2.0, ad.matmul(x, _transpose(centers))))
    s = ad.add(s, ad.reshape(cc, (1, -1)))
    return ad.where(ad.constant_value(s) > 0, s, 0.0)


def _transpose(a):
    return a.T if isinstance(a, ad.Node) else np.asarray(a).T


# --------------------------------------------------------------------------- the map


class FeatureMap:
    """A realised feature map: spec, input dimension and parameter arrays."""

    def __init__(self, spec: FeatureMapSpec, in_dim: int):
        if in_dim < 1:
            raise SpecError("input dimension must be at least 1")
        self.spec = spec
        self.in_dim = int(in_dim)
        self.params: dict[str, np.ndarray] = {}
        self.trainable: tuple[str, ...] = ()
        self.diagnostics = {"empty_support": 0}
        self._init_params()
        if spec.family is Family.COMPLEX_GAUSSIAN and self.out_dim > COMPLEX_GAUSSIAN_CAP:
            raise SpecError(f"complex_gaussian output size {spec.m}^{in_dim} exceeds cap "
                            f"{COMPLEX_GAUSSIAN_CAP}")

    def _init_params(self):
        spec, d = self.spec, self.in_dim
        rng = np.random.default_rng(spec.seed)
        fam = spec.family
        if fam is Family.RANDOM_FOURIER:
            self.params["B"] = rng.standard_normal((spec.m, d))
        elif fam is Family.SINUSOIDAL:
            self.params["W"] = spec.sigma * rng.standard_normal((spec.m, d))
            self.params["b"] = rng.standard_normal(spec.m)
            self.trainable = ("W", "b")
        elif fam is Family.COMPLEX_TRIANGLE:
            self.params["t"] = rng.uniform(0.0, 1.0, spec.m)
        elif fam in RBF_FAMILIES:
            self.params["centers"] = 0.5 + CENTER_SPREAD * rng.standard_normal((spec.m, d))
            self.params["weights"] = np.ones(spec.m)
            self.trainable = ("centers", "weights")

    @property
    def out_dim(self) -> int:
        spec, d = self.spec, self.in_dim
        fam = spec.family
        if fam is Family.IDENTITY:
            return d
        if fam is Family.BASIC_ENCODING:
            return 2 * d
        if fam is Family.POSITIONAL_ENCODING:
            return 2 * spec.m * d
        if fam is Family.RANDOM_FOURIER:
            return 2 * spec.m
        if fam is Family.COMPLEX_TRIANGLE:
            return spec.m * d
        if fam is Family.COMPLEX_GAUSSIAN:
            return spec.m**d
        if fam is Family.RBF_POLY:
            return spec.m + spec.p_terms
        return spec.m

    def trainable_params(self) -> dict[str, np.ndarray]:
        return {k: self.params[k] for k in self.trainable}

    def __call__(self, x, params: Mapping | None = None):
        p = dict(self.params)
        if params:
            p.update(params)
        fam = self.spec.family
        if fam is Family.IDENTITY:
            return x
        if fam in FOURIER_FAMILIES:
            return apply_fourier_family(self, x, p)
        if fam in COMPLEX_FAMILIES:
            return apply_complex_family(self, x, p)
        if fam is Family.RBF_COMPACT:
            return rbf_compact_support(self, x, p)
        if fam is Family.RBF_POLY:
            return rbf_polynomial_tail(self, x, p)
        if fam is Family.RBF_SURJECTIVE:
            return rbf_surjective_modulation(self, x, p)
        return rbf_features(self, x, p)


def build_feature_map(spec: FeatureMapSpec | Mapping, in_dim: int) -> FeatureMap:
    if not isinstance(spec, FeatureMapSpec):
        spec = FeatureMapSpec.from_dict(spec)
    return FeatureMap(spec, in_dim)


def _require(fmap: FeatureMap, allowed, op: str):
    if fmap.spec.family not in allowed:
        raise SpecError(f"{op} does not handle family '{fmap.spec.family.value}'")


def _params(fmap, params):
    if params is None:
        return fmap.params
    return params


# --------------------------------------------------------------------------- Fourier type


def apply_fourier_family(fmap: FeatureMap, x, params: Mapping | None = None):
    _require(fmap, FOURIER_FAMILIES, "apply_fourier_family")
    p = _params(fmap, params)
    spec, d = fmap.spec, fmap.in_dim
    fam = spec.family
    two_pi = 2.0 * math.pi
    if fam is Family.BASIC_ENCODING:
        arg = ad.mul(two_pi, x)
    elif fam is Family.POSITIONAL_ENCODING:
        freqs = spec.sigma ** (np.arange(spec.m) / spec.m)
        # block layout: coordinate-major, frequency-minor
        proj = np.kron(np.eye(d), freqs[None, :])
        arg = ad.matmul(x, two_pi * proj)
    elif fam is Family.RANDOM_FOURIER:
        arg = ad.matmul(x, _transpose(ad.mul(two_pi * spec.sigma, p["B"])))
    else:
        arg = ad.add(ad.matmul(x, _transpose(ad.mul(two_pi, p["W"]))), p["b"])
        return ad.sin(arg)
    return ad.concatenate([ad.cos(arg), ad.sin(arg)], axis=-1)


# --------------------------------------------------------------------------- complex


def apply_complex_family(fmap: FeatureMap, x, params: Mapping | None = None):
    _require(fmap, COMPLEX_FAMILIES, "apply_complex_family")
    p = _params(fmap, params)
    spec, d = fmap.spec, fmap.in_dim
    n = ad.constant_value(x).shape[0]
    if spec.family is Family.COMPLEX_TRIANGLE:
        t = p["t"]
        # (N, d*m) layout: coordinate-major
        rep = ad.matmul(x, np.kron(np.eye(d), np.ones((1, spec.m))))
        diff = ad.sub(rep, np.tile(t, d))
        dist = ad.abs_(diff)
        tri = ad.sub(1.0, ad.mul(dist, 1.0 / (0.5 * d)))
        return ad.maximum(tri, 0.0)
    tau = np.arange(spec.m) / d
    out = None
    for i in range(d):
        xi = ad.reshape(x[:, i], (n, 1))
        g = ad.exp(ad.mul(ad.square(ad.sub(xi, tau)), -0.5 / spec.sigma**2))
        if out is None:
            out = g
        else:
            k = ad.constant_value(out).shape[1]
            out = ad.reshape(ad.mul(ad.reshape(out, (n, k, 1)), ad.reshape(g, (n, 1, spec.m))),
                             (n, k * spec.m))
    return out


# --------------------------------------------------------------------------- RBF


def _normalise(fmap, weighted, mask=None):
    den = ad.sum_(weighted, axis=-1, keepdims=True)
    dv = ad.constant_value(den)
    empty = dv == 0
    if np.any(empty):
        fmap.diagnostics["empty_support"] += int(np.count_nonzero(empty))
        den = ad.add(den, np.where(empty, EMPTY_SUPPORT_EPS, 0.0))
    return ad.div(weighted, den)


def _rbf_block(fmap, x, p, cutoff=None):
    s = squared_distances(x, p["centers"])
    phi = rbf_profile(fmap.spec.rbf_kind, s, fmap.spec.sigma)
    if cutoff is not None:
        inside = ad.constant_value(s) <= cutoff**2
        phi = ad.where(inside, phi, 0.0)
    weighted = ad.mul(phi, p["weights"])
    return _normalise(fmap, weighted), s


def rbf_features(fmap: FeatureMap, x, params: Mapping | None = None):
    """Normalised RBF features ``w_i phi_i / sum_j w_j phi_j``."""
    _require(fmap, RBF_FAMILIES, "rbf_features")
    return _rbf_block(fmap, x, _params(fmap, params))[0]


def rbf_compact_support(fmap: FeatureMap, x, params: Mapping | None = None):
    """RBF features with terms beyond distance ``xi`` zeroed before normalising."""
    _require(fmap, {Family.RBF_COMPACT}, "rbf_compact_support")
    return _rbf_block(fmap, x, _params(fmap, params), cutoff=fmap.spec.xi)[0]


def polynomial_terms(x, count: int):
    """Graded per-coordinate monomials ``1, x_1..x_d, x_1^2..x_d^2, ...``."""
    n, d = ad.constant_value(x).shape
    cols = [np.ones((n, 1))]
    width, current = 1, x
    while width < count:
        take = min(count - width, d)
        cols.append(ad.getitem(current, (slice(None), slice(0, take))))
        width += take
        current = ad.mul(current, x)
    if count == 0:
        return np.zeros((n, 0))
    return ad.concatenate(cols, axis=-1) if len(cols) > 1 else cols[0]


def rbf_polynomial_tail(fmap: FeatureMap, x, params: Mapping | None = None):
    """Normalised RBF block followed by ``p_terms`` polynomial columns."""
    _require(fmap, {Family.RBF_POLY}, "rbf_polynomial_tail")
    block = _rbf_block(fmap, x, _params(fmap, params))[0]
    if fmap.spec.p_terms == 0:
        return block
    return ad.concatenate([block, polynomial_terms(x, fmap.spec.p_terms)], axis=-1)


def rbf_surjective_modulation(fmap: FeatureMap, x, params: Mapping | None = None):
    """Normalised RBF features times ``cos(2 pi r_i / gamma)``."""
    _require(fmap, {Family.RBF_SURJECTIVE}, "rbf_surjective_modulation")
    block, s = _rbf_block(fmap, x, _params(fmap, params))
    pos = ad.constant_value(s) > 0
    r = ad.where(pos, ad.sqrt(ad.where(pos, s, 1.0)), 0.0)
    return ad.mul(block, modulation_factor(r, fmap.spec.gamma))


def modulation_factor(r, gamma: float):
    if not gamma > 0:
        raise SpecError("gamma must be positive")
    return ad.cos(ad.mul(r, 2.0 * math.pi / gamma))
