"""Single-step finite-difference updates for the three model problems.

Fields are indexed ``f[i, j]`` with ``i`` along x (axis 0) and ``j`` along y.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..errors import InvalidInputError


@dataclass(frozen=True)
class GridSpec:
    nx: int
    ny: int
    dx: float
    dy: float

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise InvalidInputError(f"grid must be at least 3x3, got {self.nx}x{self.ny}")
        if not (self.dx > 0 and self.dy > 0):
            raise InvalidInputError(f"grid spacing must be positive, got dx={self.dx}, dy={self.dy}")

    @property
    def shape(self):
        return (self.nx, self.ny)

    @property
    def size(self):
        return self.nx * self.ny


class CflWarning(RuntimeWarning):
    pass


def edge_mask(shape) -> np.ndarray:
    """Boolean mask of the outer ring of a 2-D grid."""
    nx, ny = shape
    if nx < 3 or ny < 3:
        raise InvalidInputError(f"grid must be at least 3x3, got {nx}x{ny}")
    mask = np.zeros(shape, dtype=bool)
    mask[0, :] = mask[-1, :] = True
    mask[:, 0] = mask[:, -1] = True
    return mask


def boundary_indices(nx: int, ny: int, corners: bool = False):
    """Boundary nodes in clockwise order starting at ``(0, 1)``.

    Walks row 0 left to right, column ``ny-1`` downwards, row ``nx-1`` right to
    left and column 0 upwards. Corners are skipped unless ``corners`` is set, in
    which case the walk starts at ``(0, 0)``.
    """
    top = [(0, j) for j in range(1, ny - 1)]
    right = [(i, ny - 1) for i in range(1, nx - 1)]
    bottom = [(nx - 1, j) for j in range(ny - 2, 0, -1)]
    left = [(i, 0) for i in range(nx - 2, 0, -1)]
    if not corners:
        idx = top + right + bottom + left
    else:
        idx = ([(0, 0)] + top + [(0, ny - 1)] + right + [(nx - 1, ny - 1)] + bottom
               + [(nx - 1, 0)] + left)
    rows, cols = zip(*idx)
    return np.array(rows), np.array(cols)


def corner_indices(nx: int, ny: int):
    """Corners clockwise from the origin: (0,0), (0,ny-1), (nx-1,ny-1), (nx-1,0)."""
    return np.array([0, 0, nx - 1, nx - 1]), np.array([0, ny - 1, ny - 1, 0])


def _check_field(field, mask):
    f = np.asarray(field, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] < 3 or f.shape[1] < 3:
        raise InvalidInputError(f"field must be a 2-D grid of at least 3x3, got shape {f.shape}")
    if mask is None:
        mask = edge_mask(f.shape)
    elif mask.shape != f.shape:
        raise InvalidInputError(f"mask shape {mask.shape} does not match field {f.shape}")
    return f, mask


def laplace_step(field, mask=None) -> np.ndarray:
    """One Jacobi sweep of the five-point stencil; masked nodes are left untouched."""
    f, mask = _check_field(field, mask)
    new = f.copy()
    avg = 0.25 * (f[:-2, 1:-1] + f[2:, 1:-1] + f[1:-1, :-2] + f[1:-1, 2:])
    inner = new[1:-1, 1:-1]
    free = ~mask[1:-1, 1:-1]
    inner[free] = avg[free]
    return new


def cfl_number(alpha: float, dt: float, dx: float, dy: float) -> float:
    for name, val in (("alpha", alpha), ("dt", dt), ("dx", dx), ("dy", dy)):
        if not val > 0:
            raise InvalidInputError(f"{name} must be positive, got {val}")
    return alpha * dt * (1.0 / dx**2 + 1.0 / dy**2)


def cfl_check(alpha: float, dt: float, dx: float, dy: float) -> bool:
    """True iff the explicit diffusion scheme satisfies the Courant bound 1/2."""
    return cfl_number(alpha, dt, dx, dy) <= 0.5


def heat_step(field, alpha, dt, dx, dy, mask=None) -> np.ndarray:
    """Forward-Euler step of u_t = alpha * (u_xx + u_yy) with frozen masked nodes."""
    f, mask = _check_field(field, mask)
    new = f.copy()
    c = f[1:-1, 1:-1]
    lap = ((f[2:, 1:-1] - 2.0 * c + f[:-2, 1:-1]) / dx**2
           + (f[1:-1, 2:] - 2.0 * c + f[1:-1, :-2]) / dy**2)
    upd = c + dt * alpha * lap
    inner = new[1:-1, 1:-1]
    free = ~mask[1:-1, 1:-1]
    inner[free] = upd[free]
    return new


def warn_if_unstable(alpha, dt, dx, dy) -> float:
    value = cfl_number(alpha, dt, dx, dy)
    if value > 0.5:
        warnings.warn(f"CFL violated: {value:.2f} > 0.5", CflWarning, stacklevel=2)
    return value


def _periodic_laplacian(f, dx, dy):
    return ((np.roll(f, 1, 0) - 2.0 * f + np.roll(f, -1, 0)) / dx**2
            + (np.roll(f, 1, 1) - 2.0 * f + np.roll(f, -1, 1)) / dy**2)


def burgers_step(u, v, nu, dt, dx, dy):
    """One explicit step of 2-D viscous Burgers on a periodic grid.

    Convection uses the one-sided differences u_{i-1,j} - u_{i,j} and
    u_{i,j-1} - u_{i,j}, diffusion the central five-point Laplacian.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 2:
        raise InvalidInputError(f"u and v must be equal-shape 2-D fields, got {u.shape}, {v.shape}")
    u_conv = u * (np.roll(u, 1, 0) - u) / dx + v * (np.roll(u, 1, 1) - u) / dy
    v_conv = u * (np.roll(v, 1, 0) - v) / dx + v * (np.roll(v, 1, 1) - v) / dy
    u_diff = nu * _periodic_laplacian(u, dx, dy)
    v_diff = nu * _periodic_laplacian(v, dx, dy)
    return u - dt * u_conv + dt * u_diff, v - dt * v_conv + dt * v_diff
