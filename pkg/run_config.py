"""
Run configuration: dataclass defaults, a `key = value` config file, and
`--key value` command-line overrides, in that order of precedence.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from fsi_types import ConfigError
from ibm_solver import SolverConfig
from pinn import MODEL_REGISTRY, ModelConfig, model_config

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


@dataclass
class RunConfig:
    output_dir: str = "fsilab_out"

    # reference solver
    grid: int = 100
    reynolds: float = 100.0
    dt: float = 0.01
    t_end: float = 10.0
    lid_velocity: float = 1.0
    with_disc: bool = True
    radius: float = 0.2
    center_x: float = 0.6
    center_y: float = 0.5
    markers: int = 120
    kappa_p: float = 1e4
    kappa_t: float = 1.0
    substeps: int = 0
    export_csv: bool = False

    # training set
    fluid_fraction: float = 0.00005
    interface_fraction: float = 0.0005
    boundary_points: int = 2000
    initial_points: int = 2000
    sampling_seed: int = 0
    skip_origin: bool = True

    # training
    models: str = "M1,M2,M3,M4"
    seeds: str = "0"
    desk_scale: bool = False
    iterations: Optional[int] = None
    lr0: float = 1e-3
    batch_size: int = 128
    log_every: int = 100
    grid_update_every: int = 1000
    grid_percentile_lo: float = 1.0
    grid_percentile_hi: float = 99.0
    kan_base_init: str = "xavier"
    el_interface_supervision: bool = False
    detach_lagrangian_coupling: bool = False

    # evaluation
    profile_times: str = ""
    y_lines: str = "0.25,0.5,0.75,0.89,0.97"

    # execution
    workers: int = 1
    force: bool = False
    verbose: bool = False

    def model_ids(self) -> List[str]:
        ids = _split(self.models)
        unknown = [m for m in ids if m not in MODEL_REGISTRY]
        if unknown or not ids:
            raise ConfigError(f"unknown models {unknown or self.models!r}; expected a subset of {sorted(MODEL_REGISTRY)}")
        return ids

    def seed_list(self) -> List[int]:
        try:
            seeds = [int(s) for s in _split(self.seeds)]
        except ValueError as exc:
            raise ConfigError(f"seeds must be a comma-separated list of integers, got {self.seeds!r}") from exc
        if not seeds:
            raise ConfigError("at least one seed is required")
        return seeds

    def profile_time_list(self) -> Optional[List[float]]:
        return _floats(self.profile_times, "profile_times") if self.profile_times.strip() else None

    def y_line_list(self) -> List[float]:
        return _floats(self.y_lines, "y_lines")

    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            grid=self.grid, reynolds=self.reynolds, dt=self.dt, t_end=self.t_end,
            lid_velocity=self.lid_velocity, with_disc=self.with_disc, radius=self.radius,
            center_x=self.center_x, center_y=self.center_y, markers=self.markers,
            kappa_p=self.kappa_p, kappa_t=self.kappa_t, substeps=self.substeps,
        )

    def model_configs(self) -> List[ModelConfig]:
        """One configuration per (model, seed), models outermost."""
        configs = []
        for model_id in self.model_ids():
            for seed in self.seed_list():
                overrides = dict(
                    seed=seed, lr0=self.lr0, batch_size=self.batch_size, log_every=self.log_every,
                    grid_update_every=self.grid_update_every,
                    grid_percentiles=(self.grid_percentile_lo, self.grid_percentile_hi),
                    kan_base_init=self.kan_base_init,
                    el_interface_supervision=self.el_interface_supervision,
                    detach_lagrangian_coupling=self.detach_lagrangian_coupling,
                )
                if self.iterations is not None:
                    overrides["iterations"] = self.iterations
                configs.append(model_config(model_id, desk_scale=self.desk_scale, **overrides))
        return configs

    def snapshot(self) -> str:
        return "".join(f"{f.name} = {_format(getattr(self, f.name))}\n" for f in sorted(fields(self), key=lambda f: f.name))

    def write_snapshot(self, directory: Path, command: str) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / f"resolved_config_{command}.txt"
        path.write_text(self.snapshot())
        return path


def _split(text: str) -> List[str]:
    return [item.strip() for item in str(text).split(",") if item.strip()]


def _floats(text: str, key: str) -> List[float]:
    try:
        return [float(item) for item in _split(text)]
    except ValueError as exc:
        raise ConfigError(f"{key} must be a comma-separated list of numbers, got {text!r}") from exc


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(key: str, raw: str, default):
    text = raw.strip()
    try:
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(text)
        if default is None:
            return None if text.lower() == "none" else int(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"config key {key}: cannot parse {raw!r}") from exc


def parse_config_file(path: Path) -> Dict[str, str]:
    """`key = value` lines; `#` starts a comment, blank lines are skipped."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    entries = {}
    for number, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{number}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        entries[key.strip().replace("-", "_")] = value.strip()
    return entries


def parse_overrides(argv: Sequence[str]) -> Dict[str, str]:
    """`--key value` pairs; a bare `--flag` means true."""
    entries = {}
    index = 0
    argv = list(argv)
    while index < len(argv):
        token = argv[index]
        if not token.startswith("--"):
            raise ConfigError(f"unexpected argument {token!r}; overrides take the form --key value")
        key = token[2:].replace("-", "_")
        if "=" in key:
            key, value = key.split("=", 1)
            index += 1
        elif index + 1 < len(argv) and not argv[index + 1].startswith("--"):
            value = argv[index + 1]
            index += 2
        else:
            value = "true"
            index += 1
        entries[key] = value
    return entries


def resolve(config_path: Optional[Path] = None, overrides: Optional[Dict[str, str]] = None) -> RunConfig:
    """Defaults < config file < overrides; unknown keys are rejected."""
    defaults = RunConfig()
    known = {f.name for f in fields(RunConfig)}
    raw: Dict[str, str] = {}
    if config_path is not None:
        raw.update(parse_config_file(config_path))
    raw.update(overrides or {})
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    values = {key: _parse_value(key, value, getattr(defaults, key)) for key, value in raw.items()}
    return RunConfig(**values)


def split_run(name: str) -> Optional[Tuple[str, int]]:
    """("M1", 0) from a run name like M1_seed0."""
    model, sep, seed = name.rpartition("_seed")
    if not sep or not seed.isdigit():
        return None
    return model, int(seed)
