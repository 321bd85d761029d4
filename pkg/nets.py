"""
Network families: Tanh MLPs with Xavier-normal weights, and KAN layers whose
edge functions are a scaled silu plus a learnable cubic B-spline.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

import autodiff as ad
from autodiff import Variable
from fsi_types import ConfigError, MissingInputError, ShapeError
from log import setup_logger

logger = setup_logger()

ACTIVATIONS = ("tanh", "bspline")
CAVITY_INPUT_BOUNDS = ((0.0, 10.0), (0.0, 1.0), (0.0, 1.0))


def default_input_bounds(n_inputs: int) -> Tuple[Tuple[float, float], ...]:
    """(t, x, y) cavity bounds for three inputs, (-1, 1) per unit otherwise."""
    if n_inputs == len(CAVITY_INPUT_BOUNDS):
        return CAVITY_INPUT_BOUNDS
    return tuple((-1.0, 1.0) for _ in range(n_inputs))


@dataclass
class NetworkSpec:
    layer_widths: List[int]
    activation: str = "tanh"
    spline_order: int = 3
    grid_intervals: int = 8
    input_bounds: Optional[Tuple[Tuple[float, float], ...]] = None
    kan_base_init: str = "xavier"
    grid_range: Tuple[float, float] = (-1.0, 1.0)

    def __post_init__(self) -> None:
        self.layer_widths = [int(w) for w in self.layer_widths]
        if len(self.layer_widths) < 2 or any(w < 1 for w in self.layer_widths):
            raise ConfigError(f"layer widths must be >= 2 positive integers, got {self.layer_widths}")
        if self.input_bounds is None:
            self.input_bounds = default_input_bounds(self.layer_widths[0])
        self.input_bounds = tuple((float(lo), float(hi)) for lo, hi in self.input_bounds)
        self.grid_range = (float(self.grid_range[0]), float(self.grid_range[1]))
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}; expected one of {ACTIVATIONS}")
        if len(self.input_bounds) != self.layer_widths[0]:
            raise ConfigError("input_bounds needs one (lo, hi) pair per input unit")
        if any(lo >= hi for lo, hi in self.input_bounds):
            raise ConfigError(f"input bounds must satisfy lo < hi: {self.input_bounds}")
        if self.spline_order < 0 or self.grid_intervals < 2:
            raise ConfigError("spline_order must be >= 0 and grid_intervals >= 2")
        if self.kan_base_init not in ("xavier", "ones"):
            raise ConfigError(f"kan_base_init must be 'xavier' or 'ones', got {self.kan_base_init!r}")

    @property
    def n_basis(self) -> int:
        return self.spline_order + self.grid_intervals - 1

    @property
    def n_knots(self) -> int:
        return self.n_basis + self.spline_order + 1

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> "NetworkSpec":
        return cls(**data)


@dataclass
class DenseLayer:
    """One affine layer of an MLP (weight is fan_out x fan_in)."""
    weight: np.ndarray
    bias: np.ndarray


@dataclass
class KanEdgeParams:
    base_scale: Union[float, Variable]
    coeffs: Union[np.ndarray, Variable]
    knots: np.ndarray
    order: int = 3


@dataclass
class KanLayer:
    """Per-edge base scales and coefficients; knots shared per input unit."""
    base_scale: np.ndarray
    coeffs: np.ndarray
    knots: np.ndarray
    order: int = 3


def xavier_init(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    if fan_in < 1 or fan_out < 1:
        raise ConfigError(f"fan_in and fan_out must be >= 1, got {fan_in}, {fan_out}")
    std = np.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, std, size=(fan_out, fan_in))


def normalize_input(x, bounds: Sequence[Tuple[float, float]]):
    """Affine map of each coordinate column from (lo, hi) onto (-1, 1)."""
    lo = np.array([b[0] for b in bounds], dtype=np.float64)
    hi = np.array([b[1] for b in bounds], dtype=np.float64)
    scale = 2.0 / (hi - lo)
    shift = -1.0 - lo * scale
    if isinstance(x, Variable):
        if x.ndim != 2 or x.shape[1] != len(bounds):
            raise ShapeError(f"normalize_input: expected (batch, {len(bounds)}) input, got {x.shape}")
        return x * np.broadcast_to(scale, x.shape) + np.broadcast_to(shift, x.shape)
    return np.asarray(x, dtype=np.float64) * scale + shift


def _dense(h: Variable, weight, bias) -> Variable:
    weight, bias = ad.as_variable(weight), ad.as_variable(bias)
    if h.shape[1] != weight.shape[1]:
        raise ShapeError(f"dense layer expects {weight.shape[1]} inputs, got input shape {h.shape}")
    return ad.matmul(h, ad.transpose(weight)) + ad.broadcast_to(bias, (h.shape[0], bias.shape[0]))


def mlp_forward(spec: NetworkSpec, layers: Sequence, inputs: Variable) -> Variable:
    """Affine + tanh on hidden layers, affine output. ``layers`` holds (weight, bias) pairs."""
    if len(layers) != len(spec.layer_widths) - 1:
        raise ShapeError(f"spec has {len(spec.layer_widths) - 1} layers, params have {len(layers)}")
    h = ad.as_variable(inputs)
    for index, (weight, bias) in enumerate(layers):
        h = _dense(h, weight, bias)
        if index < len(layers) - 1:
            h = ad.tanh(h)
    return h


# --- B-splines ---------------------------------------------------------------

def uniform_knots(lo: float, hi: float, grid_intervals: int, order: int) -> np.ndarray:
    """``grid_intervals`` uniform points on [lo, hi] extended by ``order`` knots each side."""
    step = (hi - lo) / (grid_intervals - 1)
    interior = np.linspace(lo, hi, grid_intervals)
    left = lo - step * np.arange(order, 0, -1)
    right = hi + step * np.arange(1, order + 1)
    return np.concatenate([left, interior, right])


def bspline_basis(knots: Sequence[float], d: int, i: int, x):
    """B_i^d(x) by direct Cox-de Boor recursion, with 0/0 taken as 0."""
    knots = np.asarray(knots, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if d == 0:
        return ((knots[i] <= x) & (x < knots[i + 1])).astype(np.float64)
    left_den = knots[i + d] - knots[i]
    right_den = knots[i + d + 1] - knots[i + 1]
    left = (x - knots[i]) / left_den * bspline_basis(knots, d - 1, i, x) if left_den > 0 else 0.0
    right = (knots[i + d + 1] - x) / right_den * bspline_basis(knots, d - 1, i + 1, x) if right_den > 0 else 0.0
    return left + right


def _safe_inverse(span: np.ndarray) -> np.ndarray:
    out = np.zeros_like(span)
    np.divide(1.0, span, out=out, where=span > 0)
    return out


def _basis_values(x: np.ndarray, knots: np.ndarray, order: int) -> np.ndarray:
    xv = x[:, :, None]
    bases = ((knots[None, :, :-1] <= xv) & (xv < knots[None, :, 1:])).astype(np.float64)
    for p in range(1, order + 1):
        count = knots.shape[1] - 1 - p
        lo = knots[None, :, :count]
        hi_left = knots[None, :, p:p + count]
        lo_right = knots[None, :, 1:1 + count]
        hi = knots[None, :, p + 1:p + 1 + count]
        bases = ((xv - lo) * _safe_inverse(hi_left - lo) * bases[:, :, :count]
                 + (hi - xv) * _safe_inverse(hi - lo_right) * bases[:, :, 1:1 + count])
    return bases


def _basis_slopes(x: Variable, knots: np.ndarray, order: int) -> Variable:
    """d/dx of every order-``order`` basis, from the bases one order lower."""
    lower = bspline_bases(x, knots, order - 1)
    count = knots.shape[1] - 1 - order
    shape = (x.shape[0], x.shape[1], count)
    inv_left = np.broadcast_to(order * _safe_inverse(knots[:, order:order + count] - knots[:, :count]), shape)
    inv_right = np.broadcast_to(
        order * _safe_inverse(knots[:, order + 1:order + 1 + count] - knots[:, 1:1 + count]), shape)
    return lower[:, :, :count] * inv_left - lower[:, :, 1:1 + count] * inv_right


def bspline_bases(x: Variable, knots: np.ndarray, order: int) -> Variable:
    """All basis functions of every input unit as a single tape node.

    x is (batch, n_in), knots (n_in, n_knots); returns (batch, n_in, n_knots - order - 1).
    The backward pass records the order-1 bases, so input derivatives of any
    order reduce to the constant indicators.
    """
    x = ad.as_variable(x)
    knots = np.asarray(knots, dtype=np.float64)
    if x.ndim != 2 or knots.ndim != 2 or knots.shape[0] != x.shape[1]:
        raise ShapeError(f"bspline_bases: knots of shape {knots.shape} for input shape {x.shape}")

    def backward(g: Variable, out: Variable):
        if order == 0:
            return (None,)
        return (ad.sum_(g * _basis_slopes(x, knots, order), axis=2),)

    return ad.custom(_basis_values(x.value, knots, order), (x,), f"bspline{order}", backward)


def basis_matrix(x: np.ndarray, knots: np.ndarray, order: int) -> np.ndarray:
    return _basis_values(np.asarray(x, dtype=np.float64), np.asarray(knots, dtype=np.float64), order)


def kan_activation(edge: KanEdgeParams, x) -> Variable:
    """phi(x) = base_scale * silu(x) + sum_i c_i B_i(x) for a column of inputs."""
    x = ad.as_variable(x)
    column = ad.reshape(x, (x.size, 1))
    coeffs = ad.as_variable(edge.coeffs)
    bases = ad.reshape(bspline_bases(column, np.asarray(edge.knots)[None, :], edge.order), (x.size, coeffs.size))
    spline = ad.matmul(bases, ad.reshape(coeffs, (coeffs.size, 1)))
    return ad.reshape(ad.silu(column) * ad.as_variable(edge.base_scale) + spline, x.shape)


def kan_layer_forward(layer: KanLayer, z: Variable, base_scale=None, coeffs=None) -> Variable:
    """output_i = sum_j phi_ij(z_j). Bound variables override the stored arrays."""
    z = ad.as_variable(z)
    base_scale = ad.as_variable(layer.base_scale if base_scale is None else base_scale)
    coeffs = ad.as_variable(layer.coeffs if coeffs is None else coeffs)
    n_out, n_in, n_basis = coeffs.shape
    if z.ndim != 2 or z.shape[1] != n_in:
        raise ShapeError(f"KAN layer expects (batch, {n_in}) input, got {z.shape}")
    batch = z.shape[0]
    base = ad.matmul(ad.silu(z), ad.transpose(base_scale))
    bases = ad.reshape(bspline_bases(z, layer.knots, layer.order), (batch, n_in * n_basis))
    spline = ad.matmul(bases, ad.transpose(ad.reshape(coeffs, (n_out, n_in * n_basis))))
    return base + spline


def update_grid(layer: KanLayer, inputs: np.ndarray, grid_intervals: int,
                percentiles: Tuple[float, float] = (1.0, 99.0)) -> int:
    """Move each input unit's knots onto the batch and refit coefficients.

    The new interior span is the batch's [min, max]. Knots stay where they are
    when the batch lies inside the current span and its ``percentiles`` reach
    to within one grid step of both ends. Returns the number of input units
    whose knots moved.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != layer.knots.shape[0]:
        raise ShapeError(f"update_grid: expected (batch, {layer.knots.shape[0]}) inputs, got {inputs.shape}")
    if len(inputs) < 2:
        return 0
    order = layer.order
    old_bases = basis_matrix(inputs, layer.knots, order)
    # spline part of every edge on the batch: (batch, n_out, n_in)
    old_spline = np.einsum("bjr,ijr->bij", old_bases, layer.coeffs)
    moved = 0
    for j in range(inputs.shape[1]):
        column = inputs[:, j]
        lo, hi = float(column.min()), float(column.max())
        if not hi - lo > 1e-12:
            continue
        span_lo, span_hi = layer.knots[j, order], layer.knots[j, -order - 1]
        step = (span_hi - span_lo) / (grid_intervals - 1)
        q_lo, q_hi = np.percentile(column, percentiles)
        if span_lo <= lo and hi <= span_hi and q_lo - span_lo <= step and span_hi - q_hi <= step:
            continue
        knots = uniform_knots(lo, hi, grid_intervals, order)
        design = basis_matrix(inputs[:, j:j + 1], knots[None, :], order)[:, 0, :]
        solution, *_ = np.linalg.lstsq(design, old_spline[:, :, j], rcond=None)
        layer.knots[j] = knots
        layer.coeffs[:, j, :] = solution.T
        moved += 1
    return moved


def param_count(spec: NetworkSpec) -> int:
    widths = spec.layer_widths
    if spec.activation == "tanh":
        return sum((n_in + 1) * n_out for n_in, n_out in zip(widths[:-1], widths[1:]))
    return sum(n_in * n_out * (spec.n_basis + 1) for n_in, n_out in zip(widths[:-1], widths[1:]))


def param_count_formula(spec: NetworkSpec) -> str:
    if spec.activation == "tanh":
        return "sum_l (n_{l-1} + 1) * n_l  (weights + biases)"
    return (f"sum_l n_{{l-1}} * n_l * ({spec.n_basis} + 1)  "
            f"(d + k - 1 = {spec.n_basis} spline coefficients + 1 base scale per edge; knots not counted)")


class Network:
    """A network spec plus its named parameter arrays."""

    def __init__(self, spec: NetworkSpec, layers: List[Union[DenseLayer, KanLayer]], seed: Optional[int] = None):
        self.spec = spec
        self.layers = layers
        self.seed = seed

    @classmethod
    def initialize(cls, spec: NetworkSpec, rng: np.random.Generator, seed: Optional[int] = None) -> "Network":
        layers: List[Union[DenseLayer, KanLayer]] = []
        for n_in, n_out in zip(spec.layer_widths[:-1], spec.layer_widths[1:]):
            if spec.activation == "tanh":
                layers.append(DenseLayer(xavier_init(n_in, n_out, rng), np.zeros(n_out)))
                continue
            if spec.kan_base_init == "xavier":
                base_scale = xavier_init(n_in, n_out, rng)
            else:
                base_scale = np.ones((n_out, n_in))
            knots = np.tile(uniform_knots(*spec.grid_range, spec.grid_intervals, spec.spline_order), (n_in, 1))
            layers.append(KanLayer(base_scale, np.zeros((n_out, n_in, spec.n_basis)), knots, spec.spline_order))
        return cls(spec, layers, seed)

    # --- named arrays -------------------------------------------------------

    def parameters(self) -> Dict[str, np.ndarray]:
        """Learnable arrays by name (knots excluded)."""
        params = {}
        for index, layer in enumerate(self.layers):
            if isinstance(layer, DenseLayer):
                params[f"layer{index}.weight"] = layer.weight
                params[f"layer{index}.bias"] = layer.bias
            else:
                params[f"layer{index}.base_scale"] = layer.base_scale
                params[f"layer{index}.coeffs"] = layer.coeffs
        return params

    def buffers(self) -> Dict[str, np.ndarray]:
        return {f"layer{i}.knots": layer.knots for i, layer in enumerate(self.layers) if isinstance(layer, KanLayer)}

    def set_parameter(self, name: str, value: np.ndarray) -> None:
        layer_name, attr = name.split(".")
        layer = self.layers[int(layer_name[len("layer"):])]
        current = getattr(layer, attr)
        if current.shape != value.shape:
            raise ShapeError(f"{name}: expected shape {current.shape}, got {value.shape}")
        setattr(layer, attr, np.asarray(value, dtype=np.float64))

    def bind(self, tape: ad.Tape, prefix: str = "") -> Dict[str, Variable]:
        return {prefix + name: tape.leaf(value, name=prefix + name) for name, value in self.parameters().items()}

    # --- evaluation ---------------------------------------------------------

    def forward(self, inputs, bound: Optional[Dict[str, Variable]] = None, prefix: str = "") -> Variable:
        """Raw coordinates in, (batch, n_out) out. ``bound`` overrides arrays by ``prefix + name``."""
        bound = bound or {}
        h = normalize_input(ad.as_variable(inputs), self.spec.input_bounds)
        if self.spec.activation == "tanh":
            params = [(bound.get(f"{prefix}layer{i}.weight", layer.weight), bound.get(f"{prefix}layer{i}.bias", layer.bias))
                      for i, layer in enumerate(self.layers)]
            return mlp_forward(self.spec, params, h)
        for index, layer in enumerate(self.layers):
            key = f"{prefix}layer{index}."
            h = kan_layer_forward(layer, h, bound.get(key + "base_scale"), bound.get(key + "coeffs"))
        return h

    def predict(self, coords: np.ndarray) -> np.ndarray:
        return self.forward(Variable(np.asarray(coords, dtype=np.float64))).value

    def update_grids(self, coords: np.ndarray, percentiles: Tuple[float, float] = (1.0, 99.0)) -> int:
        """Refit every KAN layer's knots on the activations produced by ``coords``."""
        if self.spec.activation != "bspline":
            return 0
        moved = 0
        h = normalize_input(np.asarray(coords, dtype=np.float64), self.spec.input_bounds)
        for layer in self.layers:
            moved += update_grid(layer, h, self.spec.grid_intervals, percentiles)
            h = kan_layer_forward(layer, Variable(h)).value
        return moved

    def param_count(self) -> int:
        return param_count(self.spec)

    # --- persistence --------------------------------------------------------

    def arrays(self, prefix: str = "") -> Dict[str, np.ndarray]:
        merged = dict(self.parameters())
        merged.update(self.buffers())
        return {prefix + name: value for name, value in merged.items()}

    def header(self) -> Dict:
        return {"spec": self.spec.to_dict(), "seed": self.seed,
                "kinds": ["dense" if isinstance(l, DenseLayer) else "kan" for l in self.layers]}

    @classmethod
    def from_arrays(cls, header: Dict, arrays: Dict[str, np.ndarray], prefix: str = "") -> "Network":
        spec = NetworkSpec.from_dict(header["spec"])
        layers: List[Union[DenseLayer, KanLayer]] = []
        for index, kind in enumerate(header["kinds"]):
            key = f"{prefix}layer{index}."
            if kind == "dense":
                layers.append(DenseLayer(arrays[key + "weight"], arrays[key + "bias"]))
            else:
                layers.append(KanLayer(arrays[key + "base_scale"], arrays[key + "coeffs"],
                                       arrays[key + "knots"], spec.spline_order))
        return cls(spec, layers, header.get("seed"))

    def save(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as f:
            np.savez(f, header=np.array(json.dumps(self.header(), sort_keys=True)), **self.arrays())
        return path

    @classmethod
    def load(cls, path: Path) -> "Network":
        path = Path(path)
        if not path.exists():
            raise MissingInputError(f"checkpoint not found: {path}")
        with np.load(path, allow_pickle=False) as archive:
            header = json.loads(str(archive["header"]))
            arrays = {name: archive[name] for name in archive.files if name != "header"}
        return cls.from_arrays(header, arrays)
