"""Dataset generators for the Laplace, heat and Burgers experiments.

Every sample draws from its own PCG64 stream seeded with ``seed + index``, so a
dataset is a pure function of its parameters regardless of worker count.

Condition-vector layouts:

* laplace: the 32 non-corner boundary values, clockwise from node (0, 1)
* heat:    4 corners (clockwise from (0, 0)) then the 32 interpolated
           non-corner boundary values in the same clockwise order
* burgers: initial u (row-major), initial v (row-major), then viscosity nu
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..dmd import DmdConfig, DmdDecomposition, dmd_decompose
from ..errors import DegenerateInputError, InvalidInputError
from .solvers import (GridSpec, boundary_indices, burgers_step, corner_indices, edge_mask,
                      heat_step, laplace_step, warn_if_unstable)

EQUATIONS = ("laplace", "heat", "burgers")


def sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed + index))


@dataclass(frozen=True)
class Sample:
    condition: np.ndarray
    trajectory: np.ndarray
    target: np.ndarray
    dmd: DmdDecomposition


@dataclass
class Dataset:
    equation: str
    grid: GridSpec
    params: dict
    conditions: np.ndarray  # (N, c)
    trajectories: np.ndarray  # (N, T+1, nx, ny) or (N, T+1, 2, nx, ny)
    targets: np.ndarray  # (N, nx, ny) or (N, 2, nx, ny)
    dmd_modes: np.ndarray  # (N, n, r) complex
    dmd_eigs: np.ndarray  # (N, r) complex
    dmd_amps: np.ndarray  # (N, r) complex
    dmd_sigmas: np.ndarray  # (N, k)

    def __len__(self):
        return self.conditions.shape[0]

    @property
    def seed(self) -> int:
        return int(self.params["seed"])

    @property
    def channels(self) -> int:
        return 2 if self.equation == "burgers" else 1

    @property
    def rank(self) -> int:
        return self.dmd_eigs.shape[1]

    def target_matrix(self) -> np.ndarray:
        """Targets as (N, channels, nx*ny)."""
        return self.targets.reshape(len(self), self.channels, self.grid.size)

    def snapshot_matrix(self, i: int) -> np.ndarray:
        traj = self.trajectories[i]
        return traj.reshape(traj.shape[0], -1).T

    def decomposition(self, i: int) -> DmdDecomposition:
        return DmdDecomposition(self.dmd_modes[i], self.dmd_eigs[i], self.dmd_amps[i],
                                self.dmd_sigmas[i], n_steps=self.trajectories.shape[1] - 1)

    def sample(self, i: int) -> Sample:
        return Sample(self.conditions[i], self.trajectories[i], self.targets[i], self.decomposition(i))

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(self.equation, self.grid, dict(self.params), self.conditions[index],
                       self.trajectories[index], self.targets[index], self.dmd_modes[index],
                       self.dmd_eigs[index], self.dmd_amps[index], self.dmd_sigmas[index])


def default_grid(equation: str) -> GridSpec:
    if equation == "laplace":
        return GridSpec(10, 10, 1.0 / 9, 1.0 / 9)
    if equation == "heat":
        return GridSpec(10, 10, 1.0 / 19, 1.0 / 19)
    if equation == "burgers":
        return GridSpec(10, 10, 2 * math.pi / 10, 2 * math.pi / 10)
    raise InvalidInputError(f"unknown equation {equation!r}")


# -- per-sample simulators ---------------------------------------------------

def _laplace_sample(rng, grid, params):
    lo, hi = params["boundary_range"]
    rows, cols = boundary_indices(grid.nx, grid.ny)
    values = rng.uniform(lo, hi, size=rows.size)
    field0 = np.zeros(grid.shape)
    field0[rows, cols] = values  # corners stay 0
    mask = edge_mask(grid.shape)
    traj = [field0]
    for _ in range(params["iters"]):
        traj.append(laplace_step(traj[-1], mask))
    return values, np.stack(traj)


def interpolated_boundary(corners, nx, ny) -> np.ndarray:
    """Grid with each edge linearly interpolated between its two corners.

    ``corners`` are clockwise from (0,0); the interior is left at zero.
    """
    c00, c0n, cnn, cn0 = corners
    f = np.zeros((nx, ny))
    sy = np.linspace(0.0, 1.0, ny)
    sx = np.linspace(0.0, 1.0, nx)
    f[0, :] = c00 + (c0n - c00) * sy
    f[-1, :] = cn0 + (cnn - cn0) * sy
    f[:, 0] = c00 + (cn0 - c00) * sx
    f[:, -1] = c0n + (cnn - c0n) * sx
    f[corner_indices(nx, ny)] = corners  # exact, free of interpolation rounding
    return f


def _heat_sample(rng, grid, params):
    lo, hi = params["corner_range"]
    corners = rng.uniform(lo, hi, size=4)
    f = interpolated_boundary(corners, grid.nx, grid.ny)
    f[1:-1, 1:-1] = params["interior_value"]
    rows, cols = boundary_indices(grid.nx, grid.ny)
    condition = np.concatenate([corners, f[rows, cols]])
    mask = edge_mask(grid.shape)
    traj = [f]
    for _ in range(params["steps"]):
        traj.append(heat_step(traj[-1], params["alpha"], params["dt"], grid.dx, grid.dy, mask))
    return condition, np.stack(traj)


def periodic_interpolation(control, nx, ny) -> np.ndarray:
    """Periodic bilinear interpolation of a coarse k1 x k2 control grid onto nx x ny nodes."""
    k1, k2 = control.shape
    px = np.arange(nx) * k1 / nx
    py = np.arange(ny) * k2 / ny
    i0 = np.floor(px).astype(int)
    j0 = np.floor(py).astype(int)
    wx = (px - i0)[:, None]
    wy = (py - j0)[None, :]
    i1 = (i0 + 1) % k1
    j1 = (j0 + 1) % k2
    return ((1 - wx) * (1 - wy) * control[np.ix_(i0, j0)] + wx * (1 - wy) * control[np.ix_(i1, j0)]
            + (1 - wx) * wy * control[np.ix_(i0, j1)] + wx * wy * control[np.ix_(i1, j1)])


def _burgers_sample(rng, grid, params):
    lo, hi = params["velocity_range"]
    if params["initial"] == "iid":
        u = rng.uniform(lo, hi, size=grid.shape)
        v = rng.uniform(lo, hi, size=grid.shape)
    else:
        k = params["control_points"]
        u = periodic_interpolation(rng.uniform(lo, hi, size=(k, k)), grid.nx, grid.ny)
        v = periodic_interpolation(rng.uniform(lo, hi, size=(k, k)), grid.nx, grid.ny)
    nu_lo, nu_hi = params["nu_range"]
    nu = rng.uniform(nu_lo, nu_hi)
    condition = np.concatenate([u.ravel(), v.ravel(), [nu]])
    traj = [np.stack([u, v])]
    for _ in range(params["steps"]):
        u, v = burgers_step(u, v, nu, params["dt"], grid.dx, grid.dy)
        traj.append(np.stack([u, v]))
    return condition, np.stack(traj)


_SIMULATORS = {"laplace": _laplace_sample, "heat": _heat_sample, "burgers": _burgers_sample}


def _run_sample(args):
    equation, grid, params, index = args
    rng = sample_rng(params["seed"], index)
    condition, traj = _SIMULATORS[equation](rng, grid, params)
    if not np.all(np.isfinite(traj)):
        raise DegenerateInputError(f"sample {index}: solver produced non-finite values")
    cfg = DmdConfig(**params["dmd"])
    snaps = traj.reshape(traj.shape[0], -1).T
    dec = dmd_decompose(snaps, cfg)
    if cfg.rank is not None and dec.rank != cfg.rank:
        raise DegenerateInputError(
            f"sample {index}: DMD rank {dec.rank} below configured rank {cfg.rank} "
            f"(snapshot matrix is {snaps.shape[0]}x{snaps.shape[1] - 1})")
    return condition, traj, dec


def _assemble(equation, grid, params, results):
    if params["dmd"]["rank"] is None:
        ranks = {dec.rank for _, _, dec in results}
        if len(ranks) > 1:
            raise DegenerateInputError(f"energy criterion produced mixed ranks {sorted(ranks)}")
    conditions = np.stack([c for c, _, _ in results])
    trajs = np.stack([t for _, t, _ in results])
    return Dataset(
        equation=equation,
        grid=grid,
        params=params,
        conditions=conditions,
        trajectories=trajs,
        targets=trajs[:, -1].copy(),
        dmd_modes=np.stack([d.modes for _, _, d in results]),
        dmd_eigs=np.stack([d.eigenvalues for _, _, d in results]),
        dmd_amps=np.stack([d.amplitudes for _, _, d in results]),
        dmd_sigmas=np.stack([d.sigmas for _, _, d in results]),
    )


def _generate(equation, grid, params, workers):
    n = params["n_samples"]
    if n < 1:
        raise InvalidInputError(f"n_samples must be >= 1, got {n}")
    jobs = [(equation, grid, params, i) for i in range(n)]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_sample, jobs, chunksize=max(1, n // (4 * workers))))
    else:
        results = [_run_sample(job) for job in jobs]
    return _assemble(equation, grid, params, results)


def _dmd_params(dmd: Optional[DmdConfig]) -> dict:
    cfg = dmd or DmdConfig()
    return {"rank": cfg.rank, "energy_threshold": cfg.energy_threshold,
            "sigma_floor": cfg.sigma_floor, "dynamics": cfg.dynamics}


def _grid_params(grid: GridSpec) -> dict:
    return {"nx": grid.nx, "ny": grid.ny, "dx": grid.dx, "dy": grid.dy}


def generate_laplace(n_samples=1000, grid=None, iters=50, seed=0, boundary_range=(-10.0, 10.0),
                     dmd=None, workers=0) -> Dataset:
    grid = grid or default_grid("laplace")
    if iters < 1:
        raise InvalidInputError(f"iters must be >= 1, got {iters}")
    params = {"equation": "laplace", "n_samples": int(n_samples), "iters": int(iters),
              "seed": int(seed), "boundary_range": list(boundary_range),
              "grid": _grid_params(grid), "dmd": _dmd_params(dmd)}
    return _generate("laplace", grid, params, workers)


def generate_heat(n_samples=1000, grid=None, steps=50, alpha=0.5, dt=0.001, seed=0,
                  corner_range=(-25.0, 25.0), interior_value=10.0, dmd=None, workers=0) -> Dataset:
    grid = grid or default_grid("heat")
    if steps < 1:
        raise InvalidInputError(f"steps must be >= 1, got {steps}")
    warn_if_unstable(alpha, dt, grid.dx, grid.dy)
    params = {"equation": "heat", "n_samples": int(n_samples), "steps": int(steps),
              "alpha": float(alpha), "dt": float(dt), "seed": int(seed),
              "corner_range": list(corner_range), "interior_value": float(interior_value),
              "grid": _grid_params(grid), "dmd": _dmd_params(dmd)}
    return _generate("heat", grid, params, workers)


def generate_burgers(n_samples=1000, grid=None, steps=50, dt=1e-4, seed=0,
                     velocity_range=(-25.0, 25.0), nu_range=(0.01, 0.1), initial="smooth",
                     control_points=2, dmd=None, workers=0) -> Dataset:
    grid = grid or default_grid("burgers")
    if steps < 1:
        raise InvalidInputError(f"steps must be >= 1, got {steps}")
    if initial not in ("smooth", "iid"):
        raise InvalidInputError(f"initial must be 'smooth' or 'iid', got {initial!r}")
    if control_points < 1:
        raise InvalidInputError("control_points must be >= 1")
    params = {"equation": "burgers", "n_samples": int(n_samples), "steps": int(steps),
              "dt": float(dt), "seed": int(seed), "velocity_range": list(velocity_range),
              "nu_range": list(nu_range), "initial": initial, "control_points": int(control_points),
              "grid": _grid_params(grid), "dmd": _dmd_params(dmd)}
    return _generate("burgers", grid, params, workers)


GENERATORS = {"laplace": generate_laplace, "heat": generate_heat, "burgers": generate_burgers}
