"""Tanh MLP with a feature-mapping first layer."""

from __future__ import annotations

import dataclasses
import json
import math
import struct
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .featuremap import FeatureMap, FeatureMapSpec, SpecError, build_feature_map

ACTIVATIONS: dict[str, Callable] = {
    "tanh": ad.tanh,
    "identity": lambda z: z,
}

# "standard" multiplies W h directly (Xavier-scaled weights), "ntk" divides
# by sqrt(fan_in) as in the infinite-width analysis.
PARAMETERIZATIONS = ("standard", "ntk")


class ForwardError(ad.NonFiniteError):
    def __init__(self, layer: int, primitive: str):
        ad.AutodiffError.__init__(self, f"non-finite activation in layer {layer} "
                                        f"(primitive '{primitive}')")
        self.layer = layer
        self.primitive = primitive


@dataclasses.dataclass
class MlpParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"
    parameterization: str = "standard"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise SpecError(f"unknown activation '{self.activation}'")
        if self.parameterization not in PARAMETERIZATIONS:
            raise SpecError(f"unknown parameterization '{self.parameterization}'")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (w.shape[0],):
                raise SpecError(f"bias {i} shape {b.shape} does not match weight {w.shape}")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise SpecError(f"layer {i} expects {w.shape[1]} inputs, "
                                f"previous layer gives {self.weights[i - 1].shape[0]}")

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def as_dict(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"W{i}"] = w
            out[f"b{i}"] = b
        return out

    def with_arrays(self, arrays: Mapping[str, np.ndarray]) -> "MlpParams":
        n = len(self.weights)
        return MlpParams([np.asarray(arrays[f"W{i}"]) for i in range(n)],
                         [np.asarray(arrays[f"b{i}"]) for i in range(n)],
                         self.activation, self.parameterization)


def init_mlp(widths: Sequence[int], seed: int, *, activation: str = "tanh",
             parameterization: str = "standard", scheme: str = "xavier") -> MlpParams:
    """Initialise weights and zero biases for the given layer widths.

    ``widths[0]`` is the feature dimension.  ``scheme="xavier"`` draws
    uniform weights with variance ``2/(fan_in+fan_out)``; ``scheme="normal"``
    draws standard normal weights and biases (the infinite-width setting).
    """
    widths = [int(w) for w in widths]
    if len(widths) < 2:
        raise SpecError("need at least an input and an output width")
    if any(w < 1 for w in widths):
        raise SpecError(f"widths must be positive, got {widths}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        if scheme == "xavier":
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, (fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        elif scheme == "normal":
            weights.append(rng.standard_normal((fan_out, fan_in)))
            biases.append(rng.standard_normal(fan_out))
        else:
            raise SpecError(f"unknown init scheme '{scheme}'")
    return MlpParams(weights, biases, activation, parameterization)


def mlp_forward(params: MlpParams, h, arrays: Mapping | None = None):
    """Run the MLP layers on features ``h`` (rows are points)."""
    act = ACTIVATIONS[params.activation]
    ntk = params.parameterization == "ntk"
    n_layers = len(params.weights)
    for i in range(n_layers):
        w = params.weights[i] if arrays is None else arrays[f"W{i}"]
        b = params.biases[i] if arrays is None else arrays[f"b{i}"]
        try:
            z = ad.matmul(h, w.T)
            if ntk:
                z = ad.mul(z, 1.0 / math.sqrt(params.weights[i].shape[1]))
            z = ad.add(z, b)
            h = act(z) if i < n_layers - 1 else z
        except ad.NonFiniteError as exc:
            raise ForwardError(i + 1, getattr(exc, "primitive", "?")) from exc
    return h


def forward(params: MlpParams, fmap: FeatureMap | None, x, arrays: Mapping | None = None,
            feature_arrays: Mapping | None = None):
    """Network output for points ``x`` already scaled to the unit box."""
    h = x if fmap is None else fmap(x, feature_arrays)
    return mlp_forward(params, h, arrays)


class PinnNetwork:
    """Feature map plus MLP, with inputs rescaled from ``bounds`` to ``[0, 1]^d``.

    Parameters are exposed as one flat dict with ``feature.*`` and ``mlp.*``
    names so the optimiser can treat every block uniformly.
    """

    def __init__(self, fmap: FeatureMap, mlp: MlpParams, bounds, out_scale: float = 1.0):
        bounds = np.asarray(bounds, dtype=np.float64)
        if bounds.shape != (fmap.in_dim, 2):
            raise SpecError(f"bounds shape {bounds.shape} does not match input dim {fmap.in_dim}")
        if mlp.widths[0] != fmap.out_dim:
            raise SpecError(f"first MLP width {mlp.widths[0]} must equal feature dimension "
                            f"{fmap.out_dim}")
        self.fmap = fmap
        self.mlp = mlp
        self.lo = bounds[:, 0].copy()
        self.span = (bounds[:, 1] - bounds[:, 0]).copy()
        self.out_scale = float(out_scale)

    @classmethod
    def build(cls, spec: FeatureMapSpec | Mapping, hidden: Sequence[int], out_dim: int,
              bounds, seed: int, **kwargs) -> "PinnNetwork":
        bounds = np.asarray(bounds, dtype=np.float64)
        fmap = build_feature_map(spec, bounds.shape[0])
        mlp = init_mlp([fmap.out_dim, *hidden, out_dim], seed)
        return cls(fmap, mlp, bounds, **kwargs)

    @property
    def out_dim(self) -> int:
        return self.mlp.widths[-1]

    def parameters(self) -> dict[str, np.ndarray]:
        out = {f"feature.{k}": v for k, v in self.fmap.trainable_params().items()}
        out.update({f"mlp.{k}": v for k, v in self.mlp.as_dict().items()})
        return out

    def load_parameters(self, arrays: Mapping[str, np.ndarray]) -> None:
        for k in self.fmap.trainable:
            self.fmap.params[k] = np.array(arrays[f"feature.{k}"], dtype=np.float64)
        self.mlp = self.mlp.with_arrays({k[4:]: v for k, v in arrays.items() if k.startswith("mlp.")})

    def __call__(self, x, arrays: Mapping | None = None):
        """Evaluate at physical coordinates ``x`` of shape ``(N, d)``."""
        z = ad.mul(ad.sub(x, self.lo), 1.0 / self.span)
        if arrays is None:
            feat, mlp = None, None
        else:
            feat = {k[8:]: v for k, v in arrays.items() if k.startswith("feature.")}
            mlp = {k[4:]: v for k, v in arrays.items() if k.startswith("mlp.")}
        out = forward(self.mlp, self.fmap, z, mlp, feat)
        if self.out_scale != 1.0:
            out = ad.mul(out, self.out_scale)
        return out


def input_gradient_variance(params: MlpParams, fmap: FeatureMap | None, n_samples: int,
                            seed: int) -> float:
    """Sample variance of the input gradient over uniform points in the unit box.

    For ``d > 1`` every partial derivative is pooled into one sample.
    """
    if n_samples < 2:
        raise SpecError("n_samples must be at least 2")
    if params.widths[-1] != 1:
        raise SpecError("input_gradient_variance needs a scalar-output network")
    d = fmap.in_dim if fmap is not None else params.widths[0]
    x = np.random.default_rng(seed).uniform(0.0, 1.0, (n_samples, d))
    out = forward(params, fmap, ad.seed_jet(x))
    g = np.zeros((d, n_samples)) if out.d1 is None else np.asarray(out.d1)[..., 0]
    return float(np.var(g.reshape(-1), ddof=1))


# --------------------------------------------------------------------------- checkpoints

_MAGIC = b"FPCK"


def save_checkpoint(path, arrays: Mapping[str, np.ndarray], meta: Mapping | None = None) -> None:
    """Flat little-endian float64 payload preceded by a JSON shape header."""
    header, offset, blobs = {"arrays": [], "meta": dict(meta or {})}, 0, []
    for name in sorted(arrays):
        a = np.asarray(arrays[name], dtype="<f8")
        header["arrays"].append({"name": name, "shape": list(a.shape), "offset": offset})
        offset += a.size
        blobs.append(a.tobytes())
    head = json.dumps(header, sort_keys=True).encode()
    with open(Path(path), "wb") as fh:
        fh.write(_MAGIC + struct.pack("<I", len(head)) + head)
        for b in blobs:
            fh.write(b)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path} is not a checkpoint file")
    (n,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8:8 + n])
    payload = np.frombuffer(raw[8 + n:], dtype="<f8")
    out = {}
    for entry in header["arrays"]:
        size = int(np.prod(entry["shape"])) if entry["shape"] else 1
        out[entry["name"]] = payload[entry["offset"]:entry["offset"] + size].reshape(
            entry["shape"]).copy()
    return out, header["meta"]
