"""
Physics-informed models of the cavity flow.

Four registered models combine two architectures (a single network for every
domain, or an Eulerian fluid network coupled to a Lagrangian interface network)
with two activation families. This module owns their loss functions, the Adam
optimizer with a step learning-rate schedule, and the training loop.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

import autodiff as ad
from autodiff import Variable
from fsi_types import Batch, ConfigError, MissingInputError, NumericalError, Predictor, TrainingSet
from log import setup_logger
from nets import Network, NetworkSpec, param_count_formula
from sampling import minibatch
from train_log import TrainingSession, TrainReport

logger = setup_logger()

SINGLE = "SingleFSI"
EULERIAN_LAGRANGIAN = "EulerianLagrangian"
ARCHITECTURES = (SINGLE, EULERIAN_LAGRANGIAN)

SINGLE_WEIGHTS = (0.1, 2.0, 4.0, 0.1)
EL_WEIGHTS = (2.0, 2.0, 2.0, 0.2, 0.1, 0.2)

# term -> index into loss_weights
SINGLE_TERM_WEIGHTS = {"ru": 0, "rv": 0, "rc": 0, "up": 1, "bc1": 1, "ic": 2, "xi_vel": 3, "xi_dpdn": 3}
EL_TERM_WEIGHTS = {"ru": 4, "rv": 4, "rc": 4, "up": 0, "bc1": 0, "ic": 1, "dpdn": 2, "coupling": 5,
                   "interface_vel": 2}

MODEL_REGISTRY = {
    "M1": (SINGLE, "tanh", [3, 300, 300, 300, 3]),
    "M2": (SINGLE, "bspline", [3, 100, 100, 100, 3]),
    "M3": (EULERIAN_LAGRANGIAN, "tanh", [3, 300, 300, 300, 3]),
    "M4": (EULERIAN_LAGRANGIAN, "bspline", [3, 100, 100, 100, 3]),
}
DESK_WIDTHS = {"tanh": [3, 50, 50, 50, 3], "bspline": [3, 24, 24, 24, 3]}
DESK_ITERATIONS = 5000
PUBLISHED_PARAM_COUNTS = {"M1": 183305, "M2": 208000, "M3": 365105, "M4": 411000}


@dataclass
class ModelConfig:
    model_id: str
    architecture: str
    activation: str
    layer_widths: List[int]
    loss_weights: Tuple[float, ...] = ()
    lr0: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay_steps: int = 1000
    decay_rate: float = 0.99
    iterations: int = 60000
    seed: int = 0
    batch_size: int = 128
    log_every: int = 100
    grid_update_every: int = 1000
    grid_percentiles: Tuple[float, float] = (1.0, 99.0)
    spline_order: int = 3
    grid_intervals: int = 8
    kan_base_init: str = "xavier"
    density: float = 1.0
    viscosity: float = 0.01
    el_interface_supervision: bool = False
    detach_lagrangian_coupling: bool = False

    def __post_init__(self) -> None:
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.architecture!r}; expected one of {ARCHITECTURES}")
        if not self.loss_weights:
            self.loss_weights = SINGLE_WEIGHTS if self.architecture == SINGLE else EL_WEIGHTS
        self.loss_weights = tuple(float(w) for w in self.loss_weights)
        expected = 4 if self.architecture == SINGLE else 6
        if len(self.loss_weights) != expected:
            raise ConfigError(f"{self.architecture} needs {expected} loss weights, got {len(self.loss_weights)}")
        if any(w < 0 for w in self.loss_weights):
            raise ConfigError(f"loss weights must be non-negative: {self.loss_weights}")
        if self.iterations < 0 or self.batch_size < 1 or self.log_every < 1:
            raise ConfigError("iterations must be >= 0, batch_size and log_every >= 1")
        if self.lr0 <= 0 or self.decay_steps < 1:
            raise ConfigError("lr0 must be positive and decay_steps >= 1")
        self.grid_percentiles = tuple(float(q) for q in self.grid_percentiles)
        self.network_spec()

    def network_spec(self) -> NetworkSpec:
        return NetworkSpec(layer_widths=list(self.layer_widths), activation=self.activation,
                           spline_order=self.spline_order, grid_intervals=self.grid_intervals,
                           kan_base_init=self.kan_base_init)

    @property
    def term_weights(self) -> Dict[str, int]:
        return SINGLE_TERM_WEIGHTS if self.architecture == SINGLE else EL_TERM_WEIGHTS

    def term_names(self) -> List[str]:
        if self.architecture == SINGLE:
            return list(SINGLE_TERM_WEIGHTS)
        names = ["ru", "rv", "rc", "up", "bc1", "ic", "dpdn", "coupling"]
        if self.el_interface_supervision:
            names.append("interface_vel")
        return names

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> "ModelConfig":
        return cls(**data)


def model_config(model_id: str, desk_scale: bool = False, **overrides) -> ModelConfig:
    """Registered configuration of M1-M4, optionally at desk scale."""
    if model_id not in MODEL_REGISTRY:
        raise ConfigError(f"unknown model {model_id!r}; expected one of {sorted(MODEL_REGISTRY)}")
    architecture, activation, widths = MODEL_REGISTRY[model_id]
    settings = {"model_id": model_id, "architecture": architecture, "activation": activation,
                "layer_widths": list(widths)}
    if desk_scale:
        settings["layer_widths"] = list(DESK_WIDTHS[activation])
        settings["iterations"] = DESK_ITERATIONS
    settings.update(overrides)
    return ModelConfig(**settings)


class FsiModel(Predictor):
    """One network ("fluid") or two ("eulerian", "lagrangian") behind the Predictor interface."""

    def __init__(self, config: ModelConfig, networks: Dict[str, Network]):
        self.config = config
        self.networks = networks

    @classmethod
    def initialize(cls, config: ModelConfig) -> "FsiModel":
        rng = np.random.default_rng(config.seed)
        spec = config.network_spec()
        if config.architecture == SINGLE:
            keys = ["fluid"]
        else:
            keys = ["eulerian", "lagrangian"]
        return cls(config, {key: Network.initialize(spec, rng, config.seed) for key in keys})

    def network_key(self, domain: str) -> str:
        if domain not in ("fluid", "interface"):
            raise MissingInputError(f"unknown domain {domain!r}")
        if self.config.architecture == SINGLE:
            return "fluid"
        return "eulerian" if domain == "fluid" else "lagrangian"

    def parameters(self) -> Dict[str, np.ndarray]:
        return {f"{key}/{name}": value
                for key, net in self.networks.items() for name, value in net.parameters().items()}

    def set_parameters(self, values: Dict[str, np.ndarray]) -> None:
        for full_name, value in values.items():
            key, name = full_name.split("/", 1)
            self.networks[key].set_parameter(name, value)

    def bind(self, tape: ad.Tape) -> Dict[str, Variable]:
        bound = {}
        for key, net in self.networks.items():
            bound.update(net.bind(tape, prefix=f"{key}/"))
        return bound

    def forward_network(self, key: str, inputs, bound: Optional[Dict[str, Variable]] = None) -> Variable:
        return self.networks[key].forward(inputs, bound, prefix=f"{key}/")

    def forward(self, domain: str, inputs, bound: Optional[Dict[str, Variable]] = None) -> Variable:
        return self.forward_network(self.network_key(domain), inputs, bound)

    def param_count(self) -> int:
        return sum(net.param_count() for net in self.networks.values())

    def update_grids(self, training_set: TrainingSet) -> int:
        """Refit B-spline grids on the training inputs each network sees."""
        moved = 0
        for key, net in self.networks.items():
            if key == "fluid":
                coords = np.concatenate([training_set.domain_inputs("fluid"),
                                         training_set.domain_inputs("interface")], axis=0)
            else:
                coords = training_set.domain_inputs("fluid" if key == "eulerian" else "interface")
            moved += net.update_grids(coords, self.config.grid_percentiles)
        return moved

    def save(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        header = {"kind": "model", "config": self.config.to_dict(),
                  "networks": {key: net.header() for key, net in self.networks.items()}}
        arrays = {}
        for key, net in self.networks.items():
            arrays.update(net.arrays(prefix=f"{key}/"))
        with open(path, "wb") as f:
            np.savez(f, header=np.array(json.dumps(header, sort_keys=True)), **arrays)
        return path

    @classmethod
    def from_archive(cls, header: Dict, arrays: Dict[str, np.ndarray]) -> "FsiModel":
        config = ModelConfig.from_dict(header["config"])
        networks = {key: Network.from_arrays(net_header, arrays, prefix=f"{key}/")
                    for key, net_header in header["networks"].items()}
        return cls(config, networks)

    @classmethod
    def load(cls, path: Path) -> "FsiModel":
        path = Path(path)
        if not path.exists():
            raise MissingInputError(f"checkpoint not found: {path}")
        with np.load(path, allow_pickle=False) as archive:
            header = json.loads(str(archive["header"]))
            arrays = {name: archive[name] for name in archive.files if name != "header"}
        return cls.from_archive(header, arrays)


# --- residuals ---------------------------------------------------------------

@dataclass
class FlowDerivatives:
    """Network outputs and their input derivatives, each (batch, 1) on the tape."""
    u: Variable
    v: Variable
    p: Variable
    u_t: Variable
    u_x: Variable
    u_y: Variable
    u_xx: Variable
    u_yy: Variable
    v_t: Variable
    v_x: Variable
    v_y: Variable
    v_xx: Variable
    v_yy: Variable
    p_x: Variable
    p_y: Variable


def coordinate_leaves(tape: ad.Tape, coords: np.ndarray) -> Tuple[Variable, Variable, Variable]:
    coords = np.asarray(coords, dtype=np.float64)
    return (tape.leaf(coords[:, 0:1], name="t"), tape.leaf(coords[:, 1:2], name="x"),
            tape.leaf(coords[:, 2:3], name="y"))


def flow_derivatives(forward: Callable[[Variable], Variable], coords: np.ndarray, tape: ad.Tape) -> FlowDerivatives:
    t, x, y = coordinate_leaves(tape, coords)
    out = forward(ad.concat([t, x, y], axis=1))
    u, v, p = out[:, 0:1], out[:, 1:2], out[:, 2:3]
    u_t, u_x, u_y = ad.input_gradients(u, [t, x, y])
    v_t, v_x, v_y = ad.input_gradients(v, [t, x, y])
    p_x, p_y = ad.input_gradients(p, [x, y])
    return FlowDerivatives(
        u=u, v=v, p=p,
        u_t=u_t, u_x=u_x, u_y=u_y,
        u_xx=ad.input_gradients(u_x, [x])[0], u_yy=ad.input_gradients(u_y, [y])[0],
        v_t=v_t, v_x=v_x, v_y=v_y,
        v_xx=ad.input_gradients(v_x, [x])[0], v_yy=ad.input_gradients(v_y, [y])[0],
        p_x=p_x, p_y=p_y,
    )


def residuals_navier_stokes(d: FlowDerivatives, density: float = 1.0,
                            viscosity: float = 0.01) -> Tuple[Variable, Variable, Variable]:
    r_u = (d.u_t + d.u * d.u_x + d.v * d.u_y) * density + d.p_x - (d.u_xx + d.u_yy) * viscosity
    r_v = (d.v_t + d.u * d.v_x + d.v * d.v_y) * density + d.p_y - (d.v_xx + d.v_yy) * viscosity
    r_c = d.u_x + d.v_y
    return r_u, r_v, r_c


# --- losses ------------------------------------------------------------------

@dataclass
class LossBreakdown:
    total: Variable
    terms: Dict[str, float]
    contributions: Dict[str, float]
    groups: Dict[str, Variable] = field(default_factory=dict)

    def decomposition(self) -> Dict[str, float]:
        return dict(self.contributions)


def _mean_square(a: Variable) -> Variable:
    return ad.mean(ad.square(a))


def _require(batch: Batch, names: Dict[str, str]) -> None:
    for collection, term in names.items():
        if len(getattr(batch, collection)) == 0:
            raise ConfigError(f"loss term {term}: the {collection} collection is empty")


def _column(array: np.ndarray, index: int) -> Variable:
    return Variable(np.asarray(array, dtype=np.float64)[:, index:index + 1])


def _weighted(config: ModelConfig, raw: Dict[str, Variable]) -> Tuple[Dict[str, Variable], Dict[str, float]]:
    weights = config.loss_weights
    mapping = config.term_weights
    weighted = {name: value * weights[mapping[name]] for name, value in raw.items()}
    return weighted, {name: float(value.value) for name, value in weighted.items()}


def _sum(values: List[Variable]) -> Variable:
    total = values[0]
    for value in values[1:]:
        total = total + value
    return total


def _fluid_terms(config: ModelConfig, forward: Callable[[Variable], Variable], batch: Batch,
                 tape: ad.Tape) -> Dict[str, Variable]:
    """Residual, wall and initial-condition terms of one fluid predictor."""
    d = flow_derivatives(forward, batch.collocation, tape)
    r_u, r_v, r_c = residuals_navier_stokes(d, config.density, config.viscosity)
    lid = forward(Variable(batch.top))
    walls = forward(Variable(batch.gamma0))
    initial = forward(Variable(batch.initial))
    return {
        "ru": _mean_square(r_u),
        "rv": _mean_square(r_v),
        "rc": _mean_square(r_c),
        "up": _mean_square(1.0 - lid[:, 0:1]) + _mean_square(lid[:, 1:2]),
        "bc1": _mean_square(walls[:, 0:1]) + _mean_square(walls[:, 1:2]),
        "ic": _mean_square(initial[:, 0:1]) + _mean_square(initial[:, 1:2]) + _mean_square(initial[:, 2:3]),
    }


def _interface_outputs(forward: Callable[[Variable], Variable], batch: Batch, tape: ad.Tape):
    """(outputs, normal pressure gradient) at the interface points."""
    t, x, y = coordinate_leaves(tape, batch.interface)
    out = forward(ad.concat([t, x, y], axis=1))
    p_x, p_y = ad.input_gradients(out[:, 2:3], [x, y])
    dpdn = p_x * _column(batch.interface_normals, 0) + p_y * _column(batch.interface_normals, 1)
    return out, dpdn


def _check_batch(batch: Batch) -> None:
    _require(batch, {"collocation": "ru", "top": "up", "bottom": "bc1", "left": "bc1", "right": "bc1",
                     "initial": "ic", "interface": "xi"})


def loss_single_fsi(config: ModelConfig, model: FsiModel, batch: Batch, tape: ad.Tape,
                    bound: Optional[Dict[str, Variable]] = None) -> LossBreakdown:
    _check_batch(batch)

    def forward(inputs):
        return model.forward("fluid", inputs, bound)

    raw = _fluid_terms(config, forward, batch, tape)
    out, dpdn = _interface_outputs(forward, batch, tape)
    raw["xi_vel"] = (ad.mse(out[:, 0:1], _column(batch.interface_uv, 0))
                     + ad.mse(out[:, 1:2], _column(batch.interface_uv, 1)))
    raw["xi_dpdn"] = _mean_square(dpdn)

    weighted, contributions = _weighted(config, raw)
    total = _sum([weighted[name] for name in config.term_names()])
    return LossBreakdown(total, {k: float(v.value) for k, v in raw.items()}, contributions, {"total": total})


def loss_eulerian_lagrangian(config: ModelConfig, model: FsiModel, batch: Batch, tape: ad.Tape,
                             bound: Optional[Dict[str, Variable]] = None) -> LossBreakdown:
    """L(theta1) + L(theta2) + coupling; only the coupling term reaches both networks."""
    _check_batch(batch)

    def eulerian(inputs):
        return model.forward_network("eulerian", inputs, bound)

    def lagrangian(inputs):
        return model.forward_network("lagrangian", inputs, bound)

    raw = _fluid_terms(config, eulerian, batch, tape)
    lag_out, dpdn = _interface_outputs(lagrangian, batch, tape)
    raw["dpdn"] = _mean_square(dpdn)
    if config.el_interface_supervision:
        raw["interface_vel"] = (ad.mse(lag_out[:, 0:1], _column(batch.interface_uv, 0))
                                + ad.mse(lag_out[:, 1:2], _column(batch.interface_uv, 1)))

    eul_out = eulerian(Variable(batch.interface))
    partner = Variable(lag_out.value) if config.detach_lagrangian_coupling else lag_out
    raw["coupling"] = ad.mse(eul_out[:, 0:1], partner[:, 0:1]) + ad.mse(eul_out[:, 1:2], partner[:, 1:2])

    weighted, contributions = _weighted(config, raw)
    groups = {
        "eulerian": _sum([weighted[name] for name in ("ru", "rv", "rc", "up", "bc1", "ic")]),
        "lagrangian": _sum([weighted[name] for name in ("dpdn", "interface_vel") if name in weighted]),
        "coupling": weighted["coupling"],
    }
    total = groups["eulerian"] + groups["lagrangian"] + groups["coupling"]
    groups["total"] = total
    return LossBreakdown(total, {k: float(v.value) for k, v in raw.items()}, contributions, groups)


def compute_loss(config: ModelConfig, model: FsiModel, batch: Batch, tape: ad.Tape,
                 bound: Optional[Dict[str, Variable]] = None) -> LossBreakdown:
    if config.architecture == SINGLE:
        return loss_single_fsi(config, model, batch, tape, bound)
    return loss_eulerian_lagrangian(config, model, batch, tape, bound)


# --- optimizer ---------------------------------------------------------------

@dataclass
class AdamState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    steps: Dict[str, int] = field(default_factory=dict)


def learning_rate(iteration: int, lr0: float = 1e-3, decay_steps: int = 1000, decay_rate: float = 0.99) -> float:
    return lr0 * decay_rate ** (iteration // decay_steps)


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
              decomposition: Optional[Dict[str, float]] = None) -> Dict[str, np.ndarray]:
    """Bias-corrected Adam; returns new parameter arrays and updates ``state`` in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {name}", decomposition=decomposition)
    updated = {}
    for name, value in params.items():
        g = grads[name]
        m = beta1 * state.m.get(name, np.zeros_like(value)) + (1.0 - beta1) * g
        v = beta2 * state.v.get(name, np.zeros_like(value)) + (1.0 - beta2) * g * g
        step = state.steps.get(name, 0) + 1
        state.m[name], state.v[name], state.steps[name] = m, v, step
        m_hat = m / (1.0 - beta1 ** step)
        v_hat = v / (1.0 - beta2 ** step)
        updated[name] = value - lr * m_hat / (np.sqrt(v_hat) + eps)
    return updated


class AdamOptimizer:
    """Adam over the union of a model's parameters with the step schedule."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.state = AdamState()

    def learning_rate(self, iteration: int) -> float:
        cfg = self.config
        return learning_rate(iteration, cfg.lr0, cfg.decay_steps, cfg.decay_rate)

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], iteration: int,
             decomposition: Optional[Dict[str, float]] = None) -> Dict[str, np.ndarray]:
        cfg = self.config
        return adam_step(params, grads, self.state, self.learning_rate(iteration),
                         cfg.beta1, cfg.beta2, cfg.eps, decomposition)

    def reset(self, names: List[str]) -> None:
        for name in names:
            self.state.m.pop(name, None)
            self.state.v.pop(name, None)
            self.state.steps.pop(name, None)


# --- training ----------------------------------------------------------------

class Trainer:
    """Mini-batch Adam on one model and one training set."""

    def __init__(self, config: ModelConfig, training_set: TrainingSet, model: Optional[FsiModel] = None,
                 output_dir: Optional[Path] = None):
        self.config = config
        self.training_set = training_set
        self.model = model or FsiModel.initialize(config)
        self.optimizer = AdamOptimizer(config)
        self.session = TrainingSession(output_dir)

    def loss(self, batch: Batch, with_grads: bool = True):
        """LossBreakdown of ``batch`` and, with ``with_grads``, gradients by parameter name."""
        with ad.Tape() as tape:
            bound = self.model.bind(tape)
            breakdown = compute_loss(self.config, self.model, batch, tape, bound)
            if not with_grads:
                return breakdown, {}
            names = list(bound)
            grads = ad.grad(breakdown.total, [bound[name] for name in names])
        return breakdown, {name: g.value for name, g in zip(names, grads)}

    def _batch(self, iteration: int) -> Batch:
        cfg = self.config
        return self.training_set.take(minibatch(self.training_set, cfg.batch_size, cfg.seed, iteration))

    def _grid_update_due(self, iteration: int) -> bool:
        cfg = self.config
        return (cfg.activation == "bspline" and iteration % cfg.grid_update_every == 0
                and iteration < cfg.iterations / 2)

    def _check_finite(self, breakdown: LossBreakdown, iteration: int) -> None:
        values = [float(breakdown.total.value)] + list(breakdown.contributions.values())
        if not np.all(np.isfinite(values)):
            report = self.session.end_session("failed", f"non-finite loss at iteration {iteration}")
            raise NumericalError(f"{self.config.model_id}: non-finite loss at iteration {iteration}",
                                 report=report, decomposition=breakdown.decomposition())

    def run(self) -> TrainReport:
        cfg = self.config
        self.session.start_session(cfg.model_id, cfg.architecture, cfg.activation, cfg.seed,
                                   cfg.iterations, cfg.term_names())
        self.session.record_model(self.model.param_count(), self._formula(), PUBLISHED_PARAM_COUNTS.get(cfg.model_id))
        logger.info(f"Training {self.session.report.run}: {cfg.architecture}/{cfg.activation} "
                    f"widths={cfg.layer_widths}, {self.model.param_count()} parameters, {cfg.iterations} iterations")
        coeff_names = [name for name in self.model.parameters() if name.endswith(".coeffs")]

        for iteration in range(cfg.iterations):
            if self._grid_update_due(iteration):
                moved = self.model.update_grids(self.training_set)
                self.optimizer.reset(coeff_names)
                self.session.record_grid_update(iteration, moved)
                logger.info(f"{self.session.report.run}: grid update at iteration {iteration} moved {moved} units")

            breakdown, grads = self.loss(self._batch(iteration))
            self._check_finite(breakdown, iteration)
            if iteration % cfg.log_every == 0:
                self._log(iteration, breakdown)
            try:
                updated = self.optimizer.step(self.model.parameters(), grads, iteration, breakdown.decomposition())
            except NumericalError as exc:
                exc.report = self.session.end_session("failed", str(exc))
                raise
            self.model.set_parameters(updated)

        final, _ = self.loss(self._batch(cfg.iterations), with_grads=False)
        self._check_finite(final, cfg.iterations)
        self._log(cfg.iterations, final)
        report = self.session.end_session("completed")
        logger.info(f"Finished {report.run}: loss {report.initial_loss:.4e} -> {report.final_loss:.4e}")
        return report

    def _log(self, iteration: int, breakdown: LossBreakdown) -> None:
        lr = self.optimizer.learning_rate(iteration)
        total = float(breakdown.total.value)
        self.session.record_iteration(iteration, lr, total, breakdown.contributions)
        logger.info(f"{self.session.report.run} iter={iteration} lr={lr:.3e} total={total:.6e}")

    def _formula(self) -> str:
        count = len(self.model.networks)
        formula = param_count_formula(self.config.network_spec())
        return formula if count == 1 else f"{count} x [{formula}]"


def train(config: ModelConfig, training_set: TrainingSet, dataset=None,
          output_dir: Optional[Path] = None) -> TrainReport:
    """Train, then checkpoint and evaluate when an output directory and dataset are given."""
    trainer = Trainer(config, training_set, output_dir=output_dir)
    report = trainer.run()
    if output_dir is not None:
        checkpoint = trainer.model.save(Path(output_dir) / "checkpoints" / f"{report.run}.npz")
        report.checkpoint = str(checkpoint)
        trainer.session.write_loss_log()
    if dataset is not None:
        from eval_report import evaluate_model

        report.metrics = evaluate_model(trainer.model, dataset).metrics
    if output_dir is not None:
        trainer.session.save()
    return report
