"""
Shared data types for the lab: the reference dataset, training sets and
batches, the Predictor interface every trained model implements, and the
error hierarchy whose exit codes the command line reports.
"""

from __future__ import annotations

import hashlib
import json
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

DOMAINS = ("fluid", "interface")
FIELDS = ("u", "v", "p")
EULERIAN_COLUMNS = ("t", "x", "y", "u", "v", "p", "in_fluid")
MARKER_COLUMNS = ("t", "s", "x", "y", "u", "v", "p", "nx", "ny")
WALLS = ("top", "bottom", "left", "right")


class FsiLabError(Exception):
    exit_code = 1


class ConfigError(FsiLabError):
    exit_code = 2


class NumericalError(FsiLabError):
    exit_code = 3

    def __init__(self, message: str, partial: Any = None, report: Any = None,
                 decomposition: Optional[Dict[str, float]] = None) -> None:
        super().__init__(message)
        self.partial = partial
        self.report = report
        self.decomposition = decomposition or {}


class MissingInputError(FsiLabError):
    exit_code = 4


class AutodiffError(FsiLabError):
    pass


class ShapeError(AutodiffError, ValueError):
    pass


@dataclass
class FsiDataset:
    """Eulerian fields on cell centres plus Lagrangian marker samples.

    Eulerian arrays are indexed [time, row (y), column (x)], marker arrays
    [time, marker].
    """
    times: np.ndarray
    x: np.ndarray
    y: np.ndarray
    u: np.ndarray
    v: np.ndarray
    p: np.ndarray
    in_fluid: np.ndarray
    marker_xy: np.ndarray
    marker_uv: np.ndarray
    marker_p: np.ndarray
    marker_normals: np.ndarray
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        grid_shape = (len(self.times), len(self.y), len(self.x))
        for name in ("u", "v", "p", "in_fluid"):
            if getattr(self, name).shape != grid_shape:
                raise ConfigError(f"dataset field {name} has shape {getattr(self, name).shape}, expected {grid_shape}")
        marker_shape = self.marker_p.shape
        if marker_shape[:1] != (len(self.times),) or self.marker_xy.shape[:2] != marker_shape:
            raise ConfigError("marker arrays disagree with the time axis")

    @property
    def n_markers(self) -> int:
        return int(self.marker_xy.shape[1])

    @property
    def n_eulerian_records(self) -> int:
        return int(self.u.size)

    @property
    def n_marker_records(self) -> int:
        return int(self.marker_p.size)

    def time_index(self, t: float, tol: float = 1e-6) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > tol:
            available = ", ".join(f"{value:g}" for value in self.times[:: max(1, len(self.times) // 20)])
            raise MissingInputError(f"no time slice at t={t:g}; available slices include {available} (dt={self._dt():g})")
        return k

    def _dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def eulerian_coords(self) -> np.ndarray:
        """(t, x, y) of every Eulerian record in flat record order."""
        tt, yy, xx = np.meshgrid(self.times, self.y, self.x, indexing="ij")
        return np.stack([tt.ravel(), xx.ravel(), yy.ravel()], axis=1)

    def eulerian_columns(self) -> Dict[str, np.ndarray]:
        coords = self.eulerian_coords()
        return {
            "t": coords[:, 0],
            "x": coords[:, 1],
            "y": coords[:, 2],
            "u": self.u.ravel(),
            "v": self.v.ravel(),
            "p": self.p.ravel(),
            "in_fluid": self.in_fluid.ravel().astype(np.int64),
        }

    def marker_columns(self) -> Dict[str, np.ndarray]:
        nt, m = self.marker_p.shape
        return {
            "t": np.repeat(self.times, m),
            "s": np.tile(np.arange(m, dtype=np.float64), nt),
            "x": self.marker_xy[..., 0].ravel(),
            "y": self.marker_xy[..., 1].ravel(),
            "u": self.marker_uv[..., 0].ravel(),
            "v": self.marker_uv[..., 1].ravel(),
            "p": self.marker_p.ravel(),
            "nx": self.marker_normals[..., 0].ravel(),
            "ny": self.marker_normals[..., 1].ravel(),
        }

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for name in ("times", "x", "y", "u", "v", "p", "in_fluid",
                     "marker_xy", "marker_uv", "marker_p", "marker_normals"):
            digest.update(np.ascontiguousarray(getattr(self, name)).tobytes())
        return digest.hexdigest()

    def save(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        arrays = {name: getattr(self, name) for name in (
            "times", "x", "y", "u", "v", "p", "in_fluid",
            "marker_xy", "marker_uv", "marker_p", "marker_normals")}
        with open(path, "wb") as f:
            np.savez(f, metadata=np.array(json.dumps(self.metadata, sort_keys=True)), **arrays)
        return path

    @classmethod
    def load(cls, path: Path) -> "FsiDataset":
        path = Path(path)
        if not path.exists():
            raise MissingInputError(f"dataset not found: {path}")
        with np.load(path, allow_pickle=False) as archive:
            kwargs = {name: archive[name] for name in archive.files if name != "metadata"}
            metadata = json.loads(str(archive["metadata"]))
        return cls(metadata=metadata, **kwargs)

    def write_csv(self, directory: Path) -> Dict[str, Path]:
        """Export both record tables with their exact column headers."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        written = {}
        for name, columns, table in (
            ("eulerian", EULERIAN_COLUMNS, self.eulerian_columns()),
            ("markers", MARKER_COLUMNS, self.marker_columns()),
        ):
            path = directory / f"{name}.csv"
            data = np.column_stack([table[c].astype(np.float64) for c in columns]) if len(table["t"]) else np.empty((0, len(columns)))
            fmt = ["%.17g"] * len(columns)
            if name == "eulerian":
                fmt[-1] = "%d"
            np.savetxt(path, data, delimiter=",", header=",".join(columns), comments="", fmt=fmt)
            written[name] = path
        return written


@dataclass
class Batch:
    collocation: np.ndarray
    top: np.ndarray
    bottom: np.ndarray
    left: np.ndarray
    right: np.ndarray
    initial: np.ndarray
    interface: np.ndarray
    interface_uv: np.ndarray
    interface_p: np.ndarray
    interface_normals: np.ndarray

    @property
    def gamma0(self) -> np.ndarray:
        return np.concatenate([self.bottom, self.left, self.right], axis=0)


@dataclass
class TrainingSet:
    collocation: np.ndarray
    boundary: Dict[str, np.ndarray]
    initial: np.ndarray
    interface: np.ndarray
    interface_uv: np.ndarray
    interface_p: np.ndarray
    interface_normals: np.ndarray
    provenance: Dict[str, Any] = field(default_factory=dict)

    def collections(self) -> Dict[str, int]:
        sizes = {"collocation": len(self.collocation)}
        for wall in WALLS:
            sizes[wall] = len(self.boundary[wall])
        sizes["initial"] = len(self.initial)
        sizes["interface"] = len(self.interface)
        return sizes

    def take(self, indices: Dict[str, np.ndarray]) -> Batch:
        pick = indices["interface"]
        return Batch(
            collocation=self.collocation[indices["collocation"]],
            top=self.boundary["top"][indices["top"]],
            bottom=self.boundary["bottom"][indices["bottom"]],
            left=self.boundary["left"][indices["left"]],
            right=self.boundary["right"][indices["right"]],
            initial=self.initial[indices["initial"]],
            interface=self.interface[pick],
            interface_uv=self.interface_uv[pick],
            interface_p=self.interface_p[pick],
            interface_normals=self.interface_normals[pick],
        )

    def full_batch(self) -> Batch:
        return self.take({name: np.arange(size) for name, size in self.collections().items()})

    def domain_inputs(self, domain: str) -> np.ndarray:
        if domain == "interface":
            return self.interface
        parts = [self.collocation] + [self.boundary[w] for w in WALLS] + [self.initial]
        return np.concatenate(parts, axis=0)


class Predictor(ABC):
    """Anything that maps (t, x, y) inputs of a domain to (u, v, p)."""

    @abstractmethod
    def forward(self, domain: str, inputs, bound: Optional[Dict[str, Any]] = None):
        raise NotImplementedError

    def predict(self, domain: str, coords: np.ndarray, chunk: int = 16384) -> np.ndarray:
        from autodiff import Variable

        coords = np.asarray(coords, dtype=np.float64)
        out = np.empty((len(coords), 3))
        for start in range(0, len(coords), chunk):
            block = Variable(coords[start:start + chunk])
            out[start:start + chunk] = self.forward(domain, block).value
        return out
