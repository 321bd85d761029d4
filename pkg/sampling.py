"""
Sobol point generation, training-set construction and mini-batch selection.
"""

from __future__ import annotations

import warnings
from pathlib import Path
from typing import Dict

import numpy as np
from scipy.stats import qmc

from fsi_types import ConfigError, FsiDataset, TrainingSet, WALLS
from log import setup_logger

logger = setup_logger()

FLUID_FRACTION = 0.00005
INTERFACE_FRACTION = 0.0005
BOUNDARY_POINTS = 2000
INITIAL_POINTS = 2000
BATCH_SIZE = 128


def sobol_points(n: int, dim: int, skip_origin: bool = True) -> np.ndarray:
    """First ``n`` points of the unscrambled Sobol sequence (Joe-Kuo direction numbers)."""
    if n <= 0:
        raise ConfigError(f"sobol_points needs n > 0, got {n}")
    if dim < 1:
        raise ConfigError(f"sobol_points needs dim >= 1, got {dim}")
    skip = 1 if skip_origin else 0
    engine = qmc.Sobol(d=dim, scramble=False)
    with warnings.catch_warnings():
        # balance warnings for non power-of-two counts are irrelevant here
        warnings.simplefilter("ignore", UserWarning)
        points = engine.random(n + skip)
    return points[skip:]


def _count(fraction: float, records: int, domain: str) -> int:
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"{domain} fraction must be in (0, 1], got {fraction}")
    count = int(round(fraction * records))
    if count < 1:
        raise ConfigError(f"{domain} fraction {fraction} of {records} records yields zero points")
    return count


def _nearest(axis_values: np.ndarray, targets: np.ndarray) -> np.ndarray:
    if len(axis_values) == 1:
        return np.zeros(len(targets), dtype=np.int64)
    idx = np.clip(np.searchsorted(axis_values, targets), 1, len(axis_values) - 1)
    below = targets - axis_values[idx - 1] <= axis_values[idx] - targets
    return np.where(below, idx - 1, idx)


def _snap_records(dataset: FsiDataset, points: np.ndarray) -> np.ndarray:
    """Map unit-cube (t, x, y) points to the nearest Eulerian record index."""
    _, ny, nx = dataset.u.shape
    k = _nearest(dataset.times, points[:, 0] * dataset.times[-1])
    i = _nearest(dataset.x, points[:, 1])
    j = _nearest(dataset.y, points[:, 2])
    return (k * ny + j) * nx + i


def _select_fluid_records(dataset: FsiDataset, count: int, skip_origin: bool) -> np.ndarray:
    eligible = dataset.in_fluid.ravel()
    n_eligible = int(eligible.sum())
    if count >= n_eligible:
        return np.flatnonzero(eligible)
    draw = 1
    while draw < 4 * count:
        draw *= 2
    while True:
        records = _snap_records(dataset, sobol_points(draw, 3, skip_origin))
        records = records[eligible[records]]
        _, first = np.unique(records, return_index=True)
        ordered = records[np.sort(first)]
        if len(ordered) >= count or draw >= 8 * n_eligible:
            break
        draw *= 2
    if len(ordered) < count:
        remaining = np.setdiff1d(np.flatnonzero(eligible), ordered)
        ordered = np.concatenate([ordered, remaining[: count - len(ordered)]])
    return ordered[:count]


def _wall_points(wall: str, count: int, t_end: float, skip_origin: bool) -> np.ndarray:
    unit = sobol_points(count, 2, skip_origin)
    t = unit[:, 0] * t_end
    s = unit[:, 1]
    fixed = {"top": 1.0, "bottom": 0.0, "left": 0.0, "right": 1.0}[wall]
    if wall in ("top", "bottom"):
        return np.stack([t, s, np.full(count, fixed)], axis=1)
    return np.stack([t, np.full(count, fixed), s], axis=1)


def build_training_set(dataset: FsiDataset, fluid_fraction: float = FLUID_FRACTION,
                       interface_fraction: float = INTERFACE_FRACTION,
                       boundary_points: int = BOUNDARY_POINTS, initial_points: int = INITIAL_POINTS,
                       seed: int = 0, skip_origin: bool = True) -> TrainingSet:
    """Collocation, wall, initial and interface collections drawn from ``dataset``."""
    if boundary_points < 1 or initial_points < 1:
        raise ConfigError("boundary_points and initial_points must be >= 1")
    fluid_count = _count(fluid_fraction, dataset.n_eulerian_records, "fluid")
    if dataset.n_marker_records == 0:
        raise ConfigError("interface domain is empty: the dataset has no marker records")
    interface_count = _count(interface_fraction, dataset.n_marker_records, "interface")

    records = _select_fluid_records(dataset, fluid_count, skip_origin)
    _, ny, nx = dataset.u.shape
    k, rest = np.divmod(records, ny * nx)
    j, i = np.divmod(rest, nx)
    collocation = np.stack([dataset.times[k], dataset.x[i], dataset.y[j]], axis=1)
    if len(collocation) == 0:
        raise ConfigError("fluid domain is empty: no dataset record lies outside the disc")

    t_end = float(dataset.times[-1])
    boundary = {wall: _wall_points(wall, boundary_points, t_end, skip_origin) for wall in WALLS}
    unit = sobol_points(initial_points, 2, skip_origin)
    initial = np.stack([np.zeros(initial_points), unit[:, 0], unit[:, 1]], axis=1)

    rng = np.random.default_rng(seed)
    picks = np.sort(rng.choice(dataset.n_marker_records, size=interface_count, replace=False))
    markers = dataset.marker_columns()
    interface = np.stack([markers["t"][picks], markers["x"][picks], markers["y"][picks]], axis=1)

    provenance = {
        "seed": seed,
        "skip_origin": skip_origin,
        "fluid_fraction": fluid_fraction,
        "interface_fraction": interface_fraction,
        "boundary_points": boundary_points,
        "initial_points": initial_points,
        "dataset_checksum": dataset.checksum(),
    }
    training_set = TrainingSet(
        collocation=collocation,
        boundary=boundary,
        initial=initial,
        interface=interface,
        interface_uv=np.stack([markers["u"][picks], markers["v"][picks]], axis=1),
        interface_p=markers["p"][picks],
        interface_normals=np.stack([markers["nx"][picks], markers["ny"][picks]], axis=1),
        provenance=provenance,
    )
    logger.info(f"Training set built: {training_set.collections()}")
    return training_set


def minibatch(training_set: TrainingSet, batch_size: int = BATCH_SIZE, seed: int = 0,
              iteration: int = 0) -> Dict[str, np.ndarray]:
    """Independent draws without replacement per collection, keyed by (seed, iteration)."""
    rng = np.random.default_rng([seed, iteration])
    indices = {}
    for name, size in training_set.collections().items():
        if size == 0:
            raise ConfigError(f"collection {name} is empty")
        indices[name] = rng.choice(size, size=min(batch_size, size), replace=False)
    return indices


def write_manifest(training_set: TrainingSet, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{key}: {value}" for key, value in training_set.provenance.items()]
    lines += [f"count_{name}: {size}" for name, size in training_set.collections().items()]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_manifest(path: Path) -> Dict[str, str]:
    entries = {}
    for line in Path(path).read_text().splitlines():
        if ":" in line:
            key, value = line.split(":", 1)
            entries[key.strip()] = value.strip()
    return entries


def star_discrepancy_estimate(points: np.ndarray, resolution: int = 64) -> float:
    """Brute-force sup over anchored boxes [0, a) x [0, b) on a resolution grid (2-D)."""
    edges = np.arange(1, resolution + 1) / resolution
    inside_x = points[:, 0][None, :] < edges[:, None]
    inside_y = points[:, 1][None, :] < edges[:, None]
    counts = inside_x.astype(np.float64) @ inside_y.T.astype(np.float64)
    volumes = np.outer(edges, edges)
    return float(np.max(np.abs(counts / len(points) - volumes)))
