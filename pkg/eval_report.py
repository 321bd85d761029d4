"""
Evaluation of trained models against the reference dataset.

Relative L2 errors per domain and field, dataset field statistics, line
profiles and contour tables, ordering verdicts across models and seeds, and a
replay predictor that answers with the dataset's own values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from autodiff import Variable
from fsi_types import DOMAINS, FIELDS, ConfigError, FsiDataset, MissingInputError, NumericalError, Predictor
from log import setup_logger
from train_log import TrainReport

logger = setup_logger()

PROFILE_TIMES = (0.0, 1.0, 5.0, 6.0, 8.0, 10.0)
PROFILE_Y_LINES = (0.25, 0.5, 0.75, 0.89, 0.97)
HISTOGRAM_BINS = 50


def relative_l2(pred, ref) -> float:
    """100 * ||ref - pred|| / ||ref||."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    ref = np.asarray(ref, dtype=np.float64).ravel()
    if pred.shape != ref.shape:
        raise ConfigError(f"relative_l2: {pred.size} predictions for {ref.size} references")
    norm = np.linalg.norm(ref)
    if norm == 0.0:
        raise NumericalError("relative_l2 is undefined for an all-zero reference")
    return float(100.0 * np.linalg.norm(ref - pred) / norm)


# --- replay oracle -----------------------------------------------------------

class DatasetReplay(Predictor):
    """Answers with the dataset's own values.

    Walls return the exact lid and no-slip velocities, interior points are
    bilinear on the cell grid at the nearest time slice, and points that land on
    a marker record return that record.
    """

    def __init__(self, dataset: FsiDataset, marker_tol: float = 1e-9):
        self.dataset = dataset
        self.marker_tol = marker_tol
        self.lid_velocity = float(dataset.metadata.get("lid_velocity", 1.0))
        self._interpolators: Dict[int, List[RegularGridInterpolator]] = {}

    def _slice(self, k: int) -> List[RegularGridInterpolator]:
        if k not in self._interpolators:
            ds = self.dataset
            self._interpolators[k] = [RegularGridInterpolator((ds.y, ds.x), getattr(ds, name)[k])
                                      for name in FIELDS]
        return self._interpolators[k]

    def _time_indices(self, t: np.ndarray) -> np.ndarray:
        times = self.dataset.times
        if len(times) == 1:
            return np.zeros(len(t), dtype=np.int64)
        idx = np.clip(np.searchsorted(times, t), 1, len(times) - 1)
        return np.where(t - times[idx - 1] <= times[idx] - t, idx - 1, idx)

    def _eulerian(self, coords: np.ndarray) -> np.ndarray:
        ds = self.dataset
        out = np.zeros((len(coords), 3))
        k = self._time_indices(coords[:, 0])
        points = np.stack([np.clip(coords[:, 2], ds.y[0], ds.y[-1]),
                           np.clip(coords[:, 1], ds.x[0], ds.x[-1])], axis=1)
        for slice_index in np.unique(k):
            rows = k == slice_index
            for column, interpolator in enumerate(self._slice(int(slice_index))):
                out[rows, column] = interpolator(points[rows])
        x, y = coords[:, 1], coords[:, 2]
        on_wall = (x <= 0.0) | (x >= 1.0) | (y <= 0.0)
        out[on_wall, :2] = 0.0
        lid = (y >= 1.0) & ~((x <= 0.0) | (x >= 1.0))
        out[lid, 0] = self.lid_velocity
        out[lid, 1] = 0.0
        return out

    def _markers(self, coords: np.ndarray, require_match: bool) -> Tuple[np.ndarray, np.ndarray]:
        ds = self.dataset
        out = np.zeros((len(coords), 3))
        matched = np.zeros(len(coords), dtype=bool)
        if ds.n_markers == 0:
            if require_match:
                raise MissingInputError("the dataset has no interface markers")
            return out, matched
        k = self._time_indices(coords[:, 0])
        for slice_index in np.unique(k):
            rows = np.flatnonzero(k == slice_index)
            xy = ds.marker_xy[slice_index]
            distance = np.linalg.norm(coords[rows, None, 1:3] - xy[None, :, :], axis=2)
            nearest = np.argmin(distance, axis=1)
            out[rows, 0:2] = ds.marker_uv[slice_index, nearest]
            out[rows, 2] = ds.marker_p[slice_index, nearest]
            matched[rows] = distance[np.arange(len(rows)), nearest] <= self.marker_tol
        return out, matched

    def values(self, domain: str, coords: np.ndarray) -> np.ndarray:
        coords = np.asarray(coords, dtype=np.float64)
        if domain == "interface":
            return self._markers(coords, require_match=True)[0]
        if domain != "fluid":
            raise MissingInputError(f"unknown domain {domain!r}")
        out = self._eulerian(coords)
        marker_values, matched = self._markers(coords, require_match=False)
        out[matched] = marker_values[matched]
        return out

    def forward(self, domain: str, inputs, bound=None) -> Variable:
        value = inputs.value if isinstance(inputs, Variable) else inputs
        return Variable(self.values(domain, value))


def save_replay_checkpoint(path: Path, dataset_path: Path, model_id: str = "replay") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {"kind": "replay", "dataset": str(dataset_path), "model_id": model_id}
    with open(path, "wb") as f:
        np.savez(f, header=np.array(json.dumps(header, sort_keys=True)))
    return path


def load_checkpoint(path: Path) -> Predictor:
    from pinn import FsiModel

    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as archive:
        header = json.loads(str(archive["header"]))
        arrays = {name: archive[name] for name in archive.files if name != "header"}
    if header.get("kind") == "replay":
        return DatasetReplay(FsiDataset.load(Path(header["dataset"])))
    return FsiModel.from_archive(header, arrays)


# --- metrics -----------------------------------------------------------------

@dataclass
class EvalResult:
    metrics: Dict[str, Dict[str, float]]
    predictions: Dict[str, np.ndarray]
    error_grid: np.ndarray
    metadata: Dict[str, str] = field(default_factory=dict)

    def rows(self, model: str) -> List[Tuple[str, str, str, float]]:
        return [(model, domain, name, self.metrics[domain][name]) for domain in DOMAINS for name in FIELDS]


def evaluate_model(predictor: Predictor, dataset: FsiDataset, chunk: int = 16384) -> EvalResult:
    """Relative L2 per domain and field over every dataset record.

    The fluid row uses the Eulerian records outside the disc, the interface row
    uses the marker records.
    """
    if dataset.n_marker_records == 0:
        raise MissingInputError("the dataset has no interface domain")
    if not dataset.in_fluid.any():
        raise MissingInputError("the dataset has no fluid records")
    nt, ny, nx = dataset.u.shape
    reference = np.stack([dataset.u, dataset.v, dataset.p], axis=-1)
    predicted = np.empty_like(reference)
    yy, xx = np.meshgrid(dataset.y, dataset.x, indexing="ij")
    for k, t in enumerate(dataset.times):
        coords = np.stack([np.full(xx.size, t), xx.ravel(), yy.ravel()], axis=1)
        predicted[k] = predictor.predict("fluid", coords, chunk).reshape(ny, nx, 3)
    error_grid = np.abs(predicted - reference)

    mask = dataset.in_fluid
    fluid_pred, fluid_ref = predicted[mask], reference[mask]

    markers = dataset.marker_columns()
    marker_coords = np.stack([markers["t"], markers["x"], markers["y"]], axis=1)
    marker_ref = np.stack([markers["u"], markers["v"], markers["p"]], axis=1)
    marker_pred = predictor.predict("interface", marker_coords, chunk)

    metrics = {
        "fluid": {name: relative_l2(fluid_pred[:, c], fluid_ref[:, c]) for c, name in enumerate(FIELDS)},
        "interface": {name: relative_l2(marker_pred[:, c], marker_ref[:, c]) for c, name in enumerate(FIELDS)},
    }
    logger.info(f"Evaluation: fluid {metrics['fluid']}, interface {metrics['interface']}")
    return EvalResult(
        metrics=metrics,
        predictions={"fluid": fluid_pred, "interface": marker_pred},
        error_grid=error_grid,
        metadata={"dataset_checksum": dataset.checksum()},
    )


def write_metrics(results: Dict[str, EvalResult], path: Path) -> Path:
    """CSV model,domain,field,rel_l2_percent in sorted model order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["model,domain,field,rel_l2_percent"]
    for model in sorted(results):
        for _, domain, name, value in results[model].rows(model):
            lines.append(f"{model},{domain},{name},{value:.10g}")
    path.write_text("\n".join(lines) + "\n")
    return path


def read_metrics(path: Path) -> Dict[str, Dict[str, Dict[str, float]]]:
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"metrics file not found: {path}")
    metrics: Dict[str, Dict[str, Dict[str, float]]] = {}
    for line in path.read_text().splitlines()[1:]:
        model, domain, name, value = line.split(",")
        metrics.setdefault(model, {}).setdefault(domain, {})[name] = float(value)
    return metrics


# --- statistics --------------------------------------------------------------

def domain_values(dataset: FsiDataset) -> Dict[str, Dict[str, np.ndarray]]:
    mask = dataset.in_fluid
    return {
        "fluid": {"u": dataset.u[mask], "v": dataset.v[mask], "p": dataset.p[mask]},
        "interface": {"u": dataset.marker_uv[..., 0].ravel(), "v": dataset.marker_uv[..., 1].ravel(),
                      "p": dataset.marker_p.ravel()},
    }


def field_statistics(dataset: FsiDataset, bins: int = HISTOGRAM_BINS) -> Dict[Tuple[str, str], Dict[str, np.ndarray]]:
    """Population standard deviation and histogram per (domain, field)."""
    stats = {}
    for domain, fields in domain_values(dataset).items():
        for name, values in fields.items():
            if len(values) == 0:
                continue
            counts, edges = np.histogram(values, bins=bins)
            stats[(domain, name)] = {"std": float(np.std(values)), "counts": counts, "edges": edges}
    return stats


def write_field_statistics(stats: Dict[Tuple[str, str], Dict[str, np.ndarray]], path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["domain,field,std,bin_lo,bin_hi,count"]
    for (domain, name), entry in stats.items():
        edges, counts = entry["edges"], entry["counts"]
        for lo, hi, count in zip(edges[:-1], edges[1:], counts):
            lines.append(f"{domain},{name},{entry['std']:.10g},{lo:.10g},{hi:.10g},{int(count)}")
    path.write_text("\n".join(lines) + "\n")
    return path


# --- profiles and contours ---------------------------------------------------

def _profile_times(dataset: FsiDataset, times: Optional[Sequence[float]]) -> List[float]:
    if times is None:
        return [t for t in PROFILE_TIMES if np.min(np.abs(dataset.times - t)) <= 1e-6]
    for t in times:
        dataset.time_index(t)
    return list(times)


def _write_table(path: Path, header: Sequence[str], columns: Sequence[np.ndarray]) -> Path:
    np.savetxt(path, np.column_stack(columns), delimiter=",", header=",".join(header), comments="", fmt="%.17g")
    return path


def emit_profiles(predictor: Predictor, dataset: FsiDataset, output_dir: Path, model: str,
                  times: Optional[Sequence[float]] = None,
                  y_lines: Sequence[float] = PROFILE_Y_LINES) -> List[Path]:
    """Line profiles along x at each (time, y) and contour tables of the final slice."""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    h = float(dataset.y[1] - dataset.y[0]) if len(dataset.y) > 1 else 1.0
    rows = []
    for y in y_lines:
        if not dataset.y[0] - 0.5 * h <= y <= dataset.y[-1] + 0.5 * h:
            raise ConfigError(f"profile line y={y:g} lies outside the grid [{dataset.y[0] - 0.5 * h:g}, "
                              f"{dataset.y[-1] + 0.5 * h:g}]")
        rows.append((y, int(np.argmin(np.abs(dataset.y - y)))))

    written = []
    x = dataset.x
    for t in _profile_times(dataset, times):
        k = dataset.time_index(t)
        for y, j in rows:
            coords = np.stack([np.full(len(x), dataset.times[k]), x, np.full(len(x), dataset.y[j])], axis=1)
            pred = predictor.predict("fluid", coords)
            columns = [x]
            for c, name in enumerate(FIELDS):
                columns += [getattr(dataset, name)[k, j], pred[:, c]]
            path = output_dir / f"{model}_fluid_uvp_profile-t{t:g}-y{y:g}.csv"
            written.append(_write_table(path, ["x", "u_ref", "u_pred", "v_ref", "v_pred", "p_ref", "p_pred"], columns))

    k = len(dataset.times) - 1
    yy, xx = np.meshgrid(dataset.y, x, indexing="ij")
    coords = np.stack([np.full(xx.size, dataset.times[k]), xx.ravel(), yy.ravel()], axis=1)
    pred = predictor.predict("fluid", coords)
    for c, name in enumerate(FIELDS):
        ref = getattr(dataset, name)[k].ravel()
        path = output_dir / f"{model}_fluid_{name}_contour-t{dataset.times[k]:g}.csv"
        written.append(_write_table(path, ["x", "y", "pred", "ref", "abs_error"],
                                    [xx.ravel(), yy.ravel(), pred[:, c], ref, np.abs(pred[:, c] - ref)]))
    logger.info(f"Wrote {len(written)} profile/contour tables for {model} to {output_dir}")
    return written


# --- comparisons across models -----------------------------------------------

def _majority(wins: List[bool]) -> bool:
    return 2 * sum(wins) > len(wins)


def _velocity_score(metrics: Dict[str, Dict[str, float]], domain: str) -> float:
    return 0.5 * (metrics[domain]["u"] + metrics[domain]["v"])


def ordering_verdicts(metrics: Dict[Tuple[str, int], Dict[str, Dict[str, float]]],
                      final_losses: Dict[Tuple[str, int], float]) -> Dict[str, str]:
    """pass/fail for EL<Single, BSpline<Tanh and Pressure>Velocity.

    ``metrics`` and ``final_losses`` are keyed by (model_id, seed). Pairwise
    checks pass when the expected winner wins in a strict majority of shared
    seeds for every pair present; the pressure check uses per-model medians.
    """
    def pair_verdict(pairs: Iterable[Tuple[str, str]], score) -> str:
        outcomes = []
        for better, worse in pairs:
            seeds = sorted({s for m, s in metrics if m == better} & {s for m, s in metrics if m == worse})
            if not seeds:
                continue
            outcomes.append(_majority([score(better, s) < score(worse, s) for s in seeds]))
        if not outcomes:
            return "n/a"
        return "pass" if all(outcomes) else "fail"

    def interface_velocity(model: str, seed: int) -> float:
        return _velocity_score(metrics[(model, seed)], "interface")

    def final_loss(model: str, seed: int) -> float:
        return final_losses.get((model, seed), float("inf"))

    verdicts = {
        "EL<Single": pair_verdict([("M3", "M1"), ("M4", "M2")], interface_velocity),
        "BSpline<Tanh": pair_verdict([("M2", "M1"), ("M4", "M3")], final_loss),
    }

    models = sorted({m for m, _ in metrics})
    if not models:
        verdicts["Pressure>Velocity"] = "n/a"
        return verdicts
    checks = []
    for model in models:
        runs = [metrics[key] for key in sorted(metrics) if key[0] == model]
        for domain in DOMAINS:
            pressure = float(np.median([run[domain]["p"] for run in runs]))
            velocity = max(float(np.median([run[domain][name] for run in runs])) for name in ("u", "v"))
            checks.append(pressure > velocity)
    verdicts["Pressure>Velocity"] = "pass" if all(checks) else "fail"
    return verdicts


def write_verdicts(verdicts: Dict[str, str], path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{name}: {value}\n" for name, value in verdicts.items()))
    return path


def write_loss_curves(reports: Sequence[TrainReport], path: Path) -> Path:
    """Long-form CSV run,iter,total with one row per logged iteration."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["run,iter,total"]
    for report in sorted(reports, key=lambda r: r.run):
        for row in report.history:
            lines.append(f"{report.run},{int(row['iter'])},{float(row['total'])!r}")
    path.write_text("\n".join(lines) + "\n")
    return path
