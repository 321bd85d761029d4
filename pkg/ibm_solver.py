"""
Immersed-boundary lid-driven cavity solver.

A 2-D incompressible Navier-Stokes projection scheme on a staggered (MAC) grid,
coupled to a closed ring of Lagrangian markers through the 4-point cosine delta
kernel. The ring is held near its rest circle by penalty springs, so it moves
with the flow as a nearly rigid disc. The solver produces the FsiDataset used
to train and evaluate the networks.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from matplotlib.path import Path as PolygonPath
from scipy.sparse.linalg import splu

from fsi_types import ConfigError, FsiDataset, NumericalError
from log import setup_logger

logger = setup_logger()

SOLVER_VERSION = "fsilab-ibm-1"


@dataclass
class SolverConfig:
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
    divergence_tol: float = 1e-8
    poisson_tol: float = 1e-10
    wall_clearance: float = 2.0
    substeps: int = 0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.grid < 4:
            raise ConfigError(f"grid must be >= 4, got {self.grid}")
        if self.dt <= 0 or self.t_end < 0:
            raise ConfigError("dt must be positive and t_end non-negative")
        if self.reynolds <= 0:
            raise ConfigError("reynolds must be positive")
        if self.with_disc:
            if self.markers < 3:
                raise ConfigError("a disc needs at least 3 markers")
            spacing = 2.0 * math.pi * self.radius / self.markers
            if not 0.25 * self.h <= spacing <= 2.0 * self.h:
                raise ConfigError(
                    f"marker spacing {spacing:.4g} lies outside [0.25h, 2h] for h={self.h:.4g}; "
                    f"adjust markers or grid")

    @property
    def h(self) -> float:
        return 1.0 / self.grid

    @property
    def viscosity(self) -> float:
        # unit density, unit lid speed and unit cavity length
        return 1.0 / self.reynolds

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


@dataclass
class FluidState:
    u: np.ndarray
    v: np.ndarray
    p: np.ndarray
    t: float
    h: float


@dataclass
class MarkerState:
    positions: np.ndarray
    rest_offsets: np.ndarray
    velocities: np.ndarray
    normals: np.ndarray
    ds: float

    @property
    def count(self) -> int:
        return len(self.positions)


@dataclass
class IbmState:
    fluid: FluidState
    markers: MarkerState


# --- kernel, interpolation and spreading ------------------------------------

def delta_kernel(r):
    """phi(r) = (1 + cos(pi r / 2)) / 4 on |r| < 2, zero elsewhere."""
    r = np.asarray(r, dtype=np.float64)
    return np.where(np.abs(r) < 2.0, 0.25 * (1.0 + np.cos(0.5 * np.pi * r)), 0.0)


def _stencil(positions: np.ndarray, origin: Tuple[float, float], h: float, shape: Tuple[int, int]):
    gx = (positions[:, 0] - origin[0]) / h
    gy = (positions[:, 1] - origin[1]) / h
    offsets = np.arange(-1, 3)
    ix = np.floor(gx).astype(np.int64)[:, None] + offsets
    iy = np.floor(gy).astype(np.int64)[:, None] + offsets
    bad = (ix[:, 0] < 0) | (ix[:, -1] >= shape[1]) | (iy[:, 0] < 0) | (iy[:, -1] >= shape[0])
    if bad.any():
        index = int(np.flatnonzero(bad)[0])
        x, y = positions[index]
        raise NumericalError(f"marker {index} at ({x:.4f}, {y:.4f}) is too close to the wall for the 4-point kernel")
    return ix, iy, delta_kernel(gx[:, None] - ix), delta_kernel(gy[:, None] - iy)


def interpolate_field(field: np.ndarray, positions: np.ndarray, origin: Tuple[float, float], h: float) -> np.ndarray:
    """sum_grid field * delta_h(x - X) * h^2 at each marker."""
    if len(positions) == 0:
        return np.zeros(0)
    ix, iy, wx, wy = _stencil(positions, origin, h, field.shape)
    values = field[iy[:, :, None], ix[:, None, :]]
    return np.einsum("mba,mb,ma->m", values, wy, wx)


def spread_field(values: np.ndarray, positions: np.ndarray, origin: Tuple[float, float], h: float,
                 shape: Tuple[int, int], ds: float) -> np.ndarray:
    """sum_markers F * delta_h(x - X) * ds, the transpose of interpolate_field."""
    field = np.zeros(shape)
    if len(positions) == 0:
        return field
    ix, iy, wx, wy = _stencil(positions, origin, h, shape)
    weights = values[:, None, None] * wy[:, :, None] * wx[:, None, :] * (ds / (h * h))
    rows = np.broadcast_to(iy[:, :, None], weights.shape)
    cols = np.broadcast_to(ix[:, None, :], weights.shape)
    np.add.at(field, (rows, cols), weights)
    return field


def u_origin(h: float) -> Tuple[float, float]:
    return (0.0, 0.5 * h)


def v_origin(h: float) -> Tuple[float, float]:
    return (0.5 * h, 0.0)


def p_origin(h: float) -> Tuple[float, float]:
    return (0.5 * h, 0.5 * h)


def check_wall_clearance(positions: np.ndarray, h: float, clearance: float = 2.0) -> None:
    if len(positions) == 0:
        return
    distance = np.minimum.reduce([positions[:, 0], 1.0 - positions[:, 0], positions[:, 1], 1.0 - positions[:, 1]])
    bad = np.flatnonzero(distance < clearance * h)
    if len(bad):
        index = int(bad[0])
        raise NumericalError(
            f"marker {index} at ({positions[index, 0]:.4f}, {positions[index, 1]:.4f}) "
            f"is closer than {clearance:g}h to the wall")


def interpolate_to_markers(fluid: FluidState, positions: np.ndarray, clearance: float = 2.0) -> np.ndarray:
    check_wall_clearance(positions, fluid.h, clearance)
    return np.stack([
        interpolate_field(fluid.u, positions, u_origin(fluid.h), fluid.h),
        interpolate_field(fluid.v, positions, v_origin(fluid.h), fluid.h),
    ], axis=1).reshape(len(positions), 2)


def spread_force(positions: np.ndarray, forces: np.ndarray, ds: float, grid: int,
                 clearance: float = 2.0) -> Tuple[np.ndarray, np.ndarray]:
    h = 1.0 / grid
    check_wall_clearance(positions, h, clearance)
    f_u = spread_field(forces[:, 0], positions, u_origin(h), h, (grid, grid + 1), ds)
    f_v = spread_field(forces[:, 1], positions, v_origin(h), h, (grid + 1, grid), ds)
    return f_u, f_v


# --- marker mechanics -------------------------------------------------------

def rigid_fit(positions: np.ndarray, rest_offsets: np.ndarray) -> np.ndarray:
    """Rest shape moved to the current centroid and rotated to the mean angle."""
    centroid = positions.mean(axis=0)
    rel = positions - centroid
    cross = np.sum(rest_offsets[:, 0] * rel[:, 1] - rest_offsets[:, 1] * rel[:, 0])
    dot = np.sum(rest_offsets[:, 0] * rel[:, 0] + rest_offsets[:, 1] * rel[:, 1])
    angle = math.atan2(cross, dot)
    rotation = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
    return centroid + rest_offsets @ rotation.T


def marker_elastic_force(positions: np.ndarray, rest_offsets: np.ndarray, kappa_p: float,
                         kappa_t: float) -> np.ndarray:
    """Penalty springs toward the rigidly mapped rest shape plus neighbour tension."""
    mapped = rigid_fit(positions, rest_offsets)
    laplacian = np.roll(positions, -1, axis=0) - 2.0 * positions + np.roll(positions, 1, axis=0)
    return -kappa_p * (positions - mapped) + kappa_t * laplacian


def marker_normals(positions: np.ndarray) -> np.ndarray:
    """Outward unit normals of a counter-clockwise closed curve."""
    if len(positions) == 0:
        return np.zeros((0, 2))
    tangent = np.roll(positions, -1, axis=0) - np.roll(positions, 1, axis=0)
    normals = np.stack([tangent[:, 1], -tangent[:, 0]], axis=1)
    return normals / np.linalg.norm(normals, axis=1, keepdims=True)


def check_marker_spacing(positions: np.ndarray, h: float) -> None:
    if len(positions) < 2:
        return
    spacing = np.linalg.norm(np.roll(positions, -1, axis=0) - positions, axis=1)
    bad = np.flatnonzero((spacing < 0.25 * h) | (spacing > 2.0 * h))
    if len(bad):
        index = int(bad[0])
        raise NumericalError(f"marker spacing {spacing[index]:.4g} after marker {index} left [0.25h, 2h]")


# --- fluid operators --------------------------------------------------------

def divergence(u: np.ndarray, v: np.ndarray, h: float) -> np.ndarray:
    return (u[:, 1:] - u[:, :-1] + v[1:, :] - v[:-1, :]) / h


def kinetic_energy(fluid: FluidState) -> float:
    return 0.5 * (np.sum(fluid.u ** 2) + np.sum(fluid.v ** 2)) * fluid.h ** 2


def cell_centred(fluid: FluidState) -> Tuple[np.ndarray, np.ndarray]:
    return 0.5 * (fluid.u[:, :-1] + fluid.u[:, 1:]), 0.5 * (fluid.v[:-1, :] + fluid.v[1:, :])


def stable_substeps(config: SolverConfig) -> int:
    """Substeps per output step from the diffusion, advection and spring limits."""
    if config.substeps:
        return int(config.substeps)
    h, dt = config.h, config.dt
    limits = [
        config.viscosity * dt / (0.2 * h * h),
        abs(config.lid_velocity) * dt / (0.5 * h),
    ]
    if config.with_disc:
        limits.append(dt * math.sqrt(config.kappa_p / h) / 0.5)
    # ratios like 20.000000000000004 count as 20
    return max(1, math.ceil(max(limits) - 1e-9))


class IbmSolver:
    """Owns the factorized pressure operator and advances IbmState."""

    def __init__(self, config: SolverConfig):
        self.config = config
        self.h = config.h
        self.substeps = stable_substeps(config)
        self.dt_sub = config.dt / self.substeps
        self.max_divergence = 0.0
        self._laplacian, self._lu = self._factorize(config.grid, self.h)

    @staticmethod
    def _factorize(n: int, h: float):
        second = sp.diags([np.ones(n - 1), -2.0 * np.ones(n), np.ones(n - 1)], [-1, 0, 1], format="lil")
        second[0, 0] = -1.0
        second[-1, -1] = -1.0
        eye = sp.identity(n, format="csr")
        laplacian = ((sp.kron(eye, second) + sp.kron(second, eye)) / (h * h)).tolil()
        # pin one cell to remove the constant null space of the Neumann problem
        laplacian[0, :] = 0.0
        laplacian[0, 0] = 1.0
        laplacian = laplacian.tocsc()
        return laplacian, splu(laplacian)

    def initial_state(self) -> IbmState:
        cfg, n = self.config, self.config.grid
        fluid = FluidState(np.zeros((n, n + 1)), np.zeros((n + 1, n)), np.zeros((n, n)), 0.0, self.h)
        if cfg.with_disc:
            angles = 2.0 * np.pi * np.arange(cfg.markers) / cfg.markers
            offsets = cfg.radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
            positions = np.array([cfg.center_x, cfg.center_y]) + offsets
            check_wall_clearance(positions, self.h, cfg.wall_clearance)
            ds = 2.0 * np.pi * cfg.radius / cfg.markers
        else:
            offsets = np.zeros((0, 2))
            positions = np.zeros((0, 2))
            ds = 0.0
        markers = MarkerState(positions, offsets, np.zeros_like(positions), marker_normals(positions), ds)
        return IbmState(fluid, markers)

    def project(self, u_star: np.ndarray, v_star: np.ndarray, dt: float):
        """Remove the divergent part of (u*, v*); returns (u, v, p)."""
        n, h = self.config.grid, self.h
        rhs = (divergence(u_star, v_star, h) / dt).ravel()
        rhs = rhs - rhs.mean()
        rhs[0] = 0.0
        phi = self._lu.solve(rhs)
        residual = np.linalg.norm(self._laplacian @ phi - rhs) / max(np.linalg.norm(rhs), 1.0)
        if not residual <= self.config.poisson_tol:
            raise NumericalError(f"pressure solve residual {residual:.3e} exceeds {self.config.poisson_tol:.1e}")
        phi = phi.reshape(n, n)
        u = u_star.copy()
        v = v_star.copy()
        u[:, 1:-1] -= dt * (phi[:, 1:] - phi[:, :-1]) / h
        v[1:-1, :] -= dt * (phi[1:, :] - phi[:-1, :]) / h
        max_div = float(np.max(np.abs(divergence(u, v, h))))
        if not max_div <= self.config.divergence_tol:
            raise NumericalError(f"post-projection divergence {max_div:.3e} exceeds {self.config.divergence_tol:.1e}")
        self.max_divergence = max(self.max_divergence, max_div)
        return u, v, phi - phi.mean()

    def _momentum(self, u: np.ndarray, v: np.ndarray, f_u: np.ndarray, f_v: np.ndarray, dt: float):
        n, h = self.config.grid, self.h
        nu, lid = self.config.viscosity, self.config.lid_velocity
        h2 = h * h

        # ghost rows/columns carry the lid and no-slip conditions
        ug = np.empty((n + 2, n + 1))
        ug[1:-1] = u
        ug[0] = -u[0]
        ug[-1] = 2.0 * lid - u[-1]
        vg = np.empty((n + 1, n + 2))
        vg[:, 1:-1] = v
        vg[:, 0] = -v[:, 0]
        vg[:, -1] = -v[:, -1]

        uc = u[:, 1:-1]
        du_dx = (u[:, 2:] - u[:, :-2]) / (2.0 * h)
        du_dy = (ug[2:, 1:-1] - ug[:-2, 1:-1]) / (2.0 * h)
        v_at_u = 0.25 * (v[:-1, :-1] + v[:-1, 1:] + v[1:, :-1] + v[1:, 1:])
        lap_u = (u[:, 2:] + u[:, :-2] + ug[2:, 1:-1] + ug[:-2, 1:-1] - 4.0 * uc) / h2
        u_star = np.zeros_like(u)
        u_star[:, 1:-1] = uc + dt * (-(uc * du_dx + v_at_u * du_dy) + nu * lap_u + f_u[:, 1:-1])

        vc = v[1:-1, :]
        dv_dy = (v[2:, :] - v[:-2, :]) / (2.0 * h)
        dv_dx = (vg[1:-1, 2:] - vg[1:-1, :-2]) / (2.0 * h)
        u_at_v = 0.25 * (u[:-1, :-1] + u[:-1, 1:] + u[1:, :-1] + u[1:, 1:])
        lap_v = (vg[1:-1, 2:] + vg[1:-1, :-2] + v[2:, :] + v[:-2, :] - 4.0 * vc) / h2
        v_star = np.zeros_like(v)
        v_star[1:-1, :] = vc + dt * (-(u_at_v * dv_dx + vc * dv_dy) + nu * lap_v + f_v[1:-1, :])
        return u_star, v_star

    def _substep(self, state: IbmState) -> IbmState:
        cfg, h, dt = self.config, self.h, self.dt_sub
        fluid, markers = state.fluid, state.markers
        speed = max(float(np.max(np.abs(fluid.u))), float(np.max(np.abs(fluid.v))))
        cfl = speed * dt / h
        if not cfl <= 1.0:
            raise NumericalError(f"CFL number {cfl:.3f} > 1 at t={fluid.t:.4f} (max|u|={speed:.4g}, dt={dt:.3g}, h={h:.3g})")

        n = cfg.grid
        if markers.count:
            forces = marker_elastic_force(markers.positions, markers.rest_offsets, cfg.kappa_p, cfg.kappa_t)
            f_u, f_v = spread_force(markers.positions, forces, markers.ds, n, cfg.wall_clearance)
        else:
            f_u, f_v = np.zeros((n, n + 1)), np.zeros((n + 1, n))

        u_star, v_star = self._momentum(fluid.u, fluid.v, f_u, f_v, dt)
        u, v, p = self.project(u_star, v_star, dt)
        new_fluid = FluidState(u, v, p, fluid.t + dt, h)

        positions = markers.positions
        if markers.count:
            velocities = interpolate_to_markers(new_fluid, positions, cfg.wall_clearance)
            positions = positions + dt * velocities
            check_marker_spacing(positions, h)
        return IbmState(new_fluid, replace(markers, positions=positions))

    def step(self, state: IbmState, index: Optional[int] = None) -> IbmState:
        """Advance one output step of length dt; ``index`` pins the emitted time to index * dt."""
        for _ in range(self.substeps):
            state = self._substep(state)
        fluid = state.fluid
        if index is not None:
            fluid = replace(fluid, t=index * self.config.dt)
        markers = state.markers
        if markers.count:
            markers = replace(markers,
                              velocities=interpolate_to_markers(fluid, markers.positions, self.config.wall_clearance),
                              normals=marker_normals(markers.positions))
        return IbmState(fluid, markers)


def fluid_mask(positions: np.ndarray, xc: np.ndarray, yc: np.ndarray) -> np.ndarray:
    """True for cell centres outside the marker polygon."""
    xx, yy = np.meshgrid(xc, yc)
    if len(positions) < 3:
        return np.ones(xx.shape, dtype=bool)
    inside = PolygonPath(positions).contains_points(np.stack([xx.ravel(), yy.ravel()], axis=1))
    return ~inside.reshape(xx.shape)


def _metadata(config: SolverConfig, solver: IbmSolver, partial: bool) -> Dict:
    meta = asdict(config)
    meta.update({
        "solver_version": SOLVER_VERSION,
        "density": 1.0,
        "viscosity": config.viscosity,
        "h": config.h,
        "substeps": solver.substeps,
        "dt_substep": solver.dt_sub,
        "kernel": "cosine_4point",
        "solid_model": "penalty_membrane",
        "threads": 1,
        "max_divergence": solver.max_divergence,
        "partial": partial,
    })
    return meta


def run_simulation(config: SolverConfig) -> FsiDataset:
    """Run from rest to t_end, recording every dt."""
    solver = IbmSolver(config)
    state = solver.initial_state()
    n, m = config.grid, state.markers.count
    nt = config.n_steps + 1
    h = config.h
    centres = (np.arange(n) + 0.5) * h
    times = np.arange(nt) * config.dt

    u = np.zeros((nt, n, n))
    v = np.zeros((nt, n, n))
    p = np.zeros((nt, n, n))
    in_fluid = np.ones((nt, n, n), dtype=bool)
    marker_xy = np.zeros((nt, m, 2))
    marker_uv = np.zeros((nt, m, 2))
    marker_p = np.zeros((nt, m))
    marker_n = np.zeros((nt, m, 2))

    def record(k: int, current: IbmState) -> None:
        u[k], v[k] = cell_centred(current.fluid)
        p[k] = current.fluid.p
        markers = current.markers
        if m:
            in_fluid[k] = fluid_mask(markers.positions, centres, centres)
            marker_xy[k] = markers.positions
            marker_uv[k] = markers.velocities
            marker_p[k] = interpolate_field(current.fluid.p, markers.positions, p_origin(h), h)
            marker_n[k] = markers.normals

    def assemble(count: int, partial: bool) -> FsiDataset:
        return FsiDataset(
            times=times[:count], x=centres.copy(), y=centres.copy(),
            u=u[:count], v=v[:count], p=p[:count], in_fluid=in_fluid[:count],
            marker_xy=marker_xy[:count], marker_uv=marker_uv[:count],
            marker_p=marker_p[:count], marker_normals=marker_n[:count],
            metadata=_metadata(config, solver, partial),
        )

    logger.info(f"Simulation start: grid={n}, Re={config.reynolds:g}, dt={config.dt:g}, "
                f"T={config.t_end:g}, markers={m}, substeps={solver.substeps}")
    record(0, state)
    report_every = max(1, int(round(1.0 / config.dt)))
    k = 0
    try:
        for k in range(1, nt):
            state = solver.step(state, k)
            record(k, state)
            if k % report_every == 0:
                logger.info(f"t={times[k]:.2f} kinetic_energy={kinetic_energy(state.fluid):.6f} "
                            f"max_divergence={solver.max_divergence:.2e}")
    except NumericalError as exc:
        logger.error(f"Simulation aborted at step {k}: {exc}")
        raise NumericalError(f"simulation aborted at t={times[k]:.4f}: {exc}", partial=assemble(k, True)) from exc

    dataset = assemble(nt, False)
    logger.info(f"Simulation done: {dataset.n_eulerian_records} Eulerian records, {dataset.n_marker_records} marker records")
    return dataset


def disc_motion_summary(dataset: FsiDataset) -> Dict[str, float]:
    """Rotation of the disc centroid about the primary vortex, and shape fidelity."""
    if dataset.n_markers == 0:
        return {}
    h = float(dataset.x[1] - dataset.x[0])
    stream = np.cumsum(dataset.u[-1], axis=0) * h
    j, i = np.unravel_index(int(np.argmin(stream)), stream.shape)
    centre = np.array([dataset.x[i], dataset.y[j]])

    centroids = dataset.marker_xy.mean(axis=1)
    angles = np.unwrap(np.arctan2(centroids[:, 1] - centre[1], centroids[:, 0] - centre[0]))
    rest = dataset.marker_xy[0] - centroids[0]
    radius = float(np.mean(np.linalg.norm(rest, axis=1)))
    deviation = max(
        float(np.max(np.linalg.norm(xy - rigid_fit(xy, rest), axis=1))) for xy in dataset.marker_xy
    )
    xy = dataset.marker_xy
    return {
        "vortex_x": float(centre[0]),
        "vortex_y": float(centre[1]),
        "cumulative_angle": float(abs(angles[-1] - angles[0])),
        "rotations": float(abs(angles[-1] - angles[0]) / (2.0 * np.pi)),
        "max_shape_deviation": deviation / radius,
        "markers_in_unit_square": bool(np.all((xy >= 0.0) & (xy <= 1.0))),
    }


REFERENCE_FLUID_STD = {"u": 0.208, "v": 0.130, "p": 0.115}


def statistics_cross_check(fluid_std: Dict[str, float], factor: float = 2.0) -> List[str]:
    """Warnings for fluid standard deviations far from the reference values."""
    warnings = []
    for name, reference in REFERENCE_FLUID_STD.items():
        value = fluid_std.get(name)
        if value is None:
            continue
        if not reference / factor <= value <= reference * factor:
            warnings.append(f"fluid {name} std {value:.4f} is outside a factor {factor:g} of {reference:.3f}")
    if "u" in fluid_std and "v" in fluid_std and not fluid_std["u"] > fluid_std["v"]:
        warnings.append(f"fluid u std {fluid_std['u']:.4f} does not exceed v std {fluid_std['v']:.4f}")
    for message in warnings:
        logger.warning(f"Statistics cross-check: {message}")
    return warnings
