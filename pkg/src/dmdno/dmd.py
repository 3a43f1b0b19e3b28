"""Exact DMD: rank selection, decomposition, spectral reconstruction, and the
real-valued encoding fed to the network's modes/dynamics branches."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import linalg
from .errors import DegenerateInputError, InvalidInputError

DYNAMICS_VARIANTS = ("eig_amp", "evolved")


class ImaginaryResidueWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class DmdConfig:
    rank: Optional[int] = 10
    energy_threshold: float = 0.95
    sigma_floor: float = 1e-12
    # "eig_amp": dynamics = (lambda, b); "evolved": (lambda, lambda^m b)
    dynamics: str = "eig_amp"

    def __post_init__(self):
        if self.rank is not None and self.rank < 1:
            raise InvalidInputError(f"rank must be >= 1, got {self.rank}")
        if not 0.0 < self.energy_threshold <= 1.0:
            raise InvalidInputError(f"energy_threshold must lie in (0, 1], got {self.energy_threshold}")
        if self.sigma_floor < 0:
            raise InvalidInputError("sigma_floor must be non-negative")
        if self.dynamics not in DYNAMICS_VARIANTS:
            raise InvalidInputError(f"dynamics must be one of {DYNAMICS_VARIANTS}")


@dataclass(frozen=True)
class DmdDecomposition:
    modes: np.ndarray  # (n, r) complex
    eigenvalues: np.ndarray  # (r,) complex
    amplitudes: np.ndarray  # (r,) complex
    sigmas: np.ndarray  # all singular values of X
    n_steps: int = 0  # m, number of transitions in the fitted data

    @property
    def rank(self) -> int:
        return self.eigenvalues.shape[0]


@dataclass(frozen=True)
class BranchEncoding:
    mode_vec: np.ndarray
    dyn_vec: np.ndarray


def select_rank(sigmas, cfg: DmdConfig = DmdConfig()) -> int:
    s = np.asarray(sigmas, dtype=np.float64)
    if s.size == 0:
        raise InvalidInputError("empty singular value vector")
    energy = s**2
    total = energy.sum()
    if total == 0.0:
        raise DegenerateInputError("all singular values are zero")
    if cfg.rank is not None:
        return min(cfg.rank, s.size)
    frac = np.cumsum(energy) / total
    # guard the last entry against rounding so threshold 1.0 is always reachable
    frac[-1] = 1.0
    return int(np.searchsorted(frac, cfg.energy_threshold, side="left")) + 1


def dmd_decompose(snapshots, cfg: DmdConfig = DmdConfig()) -> DmdDecomposition:
    """Fit exact DMD to the columns of ``snapshots`` (n x (m+1), time ordered)."""
    # a fixed memory layout keeps LAPACK results independent of how the input was built
    data = np.ascontiguousarray(snapshots, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 1:
        raise InvalidInputError(f"snapshots must be a 2-D (n, m+1) array, got {data.shape}")
    if data.shape[1] < 2:
        raise InvalidInputError("need at least two snapshots")
    x, xp = data[:, :-1], data[:, 1:]
    fac = linalg.svd(x)
    r = select_rank(fac.sigma, cfg)
    u_r, s_r, v_r = fac.u[:, :r], fac.sigma[:r], fac.v[:, :r]
    # regularized inversion: directions below the floor get a zero reciprocal and
    # come out as zero modes with eigenvalue 0 and amplitude 0
    keep = s_r > cfg.sigma_floor * fac.sigma[0]
    inv = np.zeros(r)
    inv[keep] = 1.0 / s_r[keep]
    xv = (xp @ v_r) * inv
    a_tilde = u_r.T @ xv
    pairs = linalg.eig(a_tilde)
    modes = xv @ pairs.vectors
    amps = linalg.lstsq_complex(modes, data[:, 0])
    return DmdDecomposition(modes, pairs.values, amps, fac.sigma.copy(), n_steps=x.shape[1])


def _powers(eigenvalues, t):
    lam = np.asarray(eigenvalues, dtype=np.complex128)
    if t == 0:
        return np.ones_like(lam)  # lambda^0 = 1, including lambda = 0
    out = np.zeros_like(lam)
    nz = lam != 0
    out[nz] = np.power(lam[nz], t)
    return out


def dmd_reconstruct(dec: DmdDecomposition, t: float) -> np.ndarray:
    """Real part of sum_i phi_i lambda_i^t b_i (principal-branch powers)."""
    if not np.isfinite(t):
        raise InvalidInputError(f"t must be finite, got {t}")
    if t < 0:
        raise InvalidInputError(f"t must be non-negative, got {t}")
    state = dec.modes @ (_powers(dec.eigenvalues, t) * dec.amplitudes)
    re, im = state.real, state.imag
    re_norm = np.linalg.norm(re)
    im_norm = np.linalg.norm(im)
    if im_norm > 1e-6 * re_norm:
        warnings.warn(f"reconstruction at t={t} has imaginary residue {im_norm:.3e} "
                      f"(real norm {re_norm:.3e})", ImaginaryResidueWarning, stacklevel=2)
    return re.copy()


def mode_order(eigenvalues, amplitudes) -> np.ndarray:
    """Indices sorting modes by descending |lambda|, ties by descending |b|."""
    return np.lexsort((-np.abs(amplitudes), -np.abs(eigenvalues)))


def encode_branch_inputs(dec: DmdDecomposition, dynamics: str = "eig_amp") -> BranchEncoding:
    """Split Re/Im encoding of modes (2*n*r) and dynamics (4*r)."""
    return encode_arrays(dec.modes, dec.eigenvalues, dec.amplitudes, dynamics, dec.n_steps)


def encode_arrays(modes, eigenvalues, amplitudes, dynamics="eig_amp", n_steps=0) -> BranchEncoding:
    order = mode_order(eigenvalues, amplitudes)
    phi = np.asarray(modes)[:, order]
    lam = np.asarray(eigenvalues)[order]
    amp = np.asarray(amplitudes)[order]
    if dynamics == "evolved":
        amp = _powers(lam, n_steps) * amp
    elif dynamics != "eig_amp":
        raise InvalidInputError(f"unknown dynamics variant {dynamics!r}")
    mode_vec = np.concatenate([phi.real.T.ravel(), phi.imag.T.ravel()])
    dyn_vec = np.concatenate([lam.real, lam.imag, amp.real, amp.imag])
    return BranchEncoding(mode_vec.astype(np.float64), dyn_vec.astype(np.float64))
