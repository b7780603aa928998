"""Self-calibrating GRAPPA operator gridding (GROG) of radial data."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .sampling import RadialAcquisition
from .tensor import load_cplx, save_cplx


class GrogError(ValueError):
    pass


@dataclass
class GrogOperators:
    """Matrix logs of the unit-cell shift operators along kx (cols) and ky (rows)."""

    log_gx: np.ndarray
    log_gy: np.ndarray

    def __post_init__(self):
        self.log_gx = np.atleast_2d(np.asarray(self.log_gx, dtype=np.complex128))
        self.log_gy = np.atleast_2d(np.asarray(self.log_gy, dtype=np.complex128))
        if self.log_gx.shape != self.log_gy.shape or self.log_gx.shape[0] != self.log_gx.shape[1]:
            raise ValueError("GROG logs must be square matrices of equal size")
        if not (np.all(np.isfinite(self.log_gx)) and np.all(np.isfinite(self.log_gy))):
            raise GrogError("non-finite GROG operator")

    @property
    def n_coil(self):
        return self.log_gx.shape[0]

    def save(self, stem):
        save_cplx(self.log_gx[None, None], f"{stem}.gx")
        save_cplx(self.log_gy[None, None], f"{stem}.gy")

    @classmethod
    def load(cls, stem):
        gx = load_cplx(f"{stem}.gx").astype(np.complex128)
        gy = load_cplx(f"{stem}.gy").astype(np.complex128)
        return cls(gx[0, 0], gy[0, 0])


@dataclass
class GriddedKSpace:
    grid: np.ndarray  # [coil, 1, row, col]
    hit_count: np.ndarray  # [row, col]
    dropped: int = 0

    @property
    def mask(self):
        return self.hit_count > 0


def _logm_eig(g, spoke, tol=1e-8):
    """Principal matrix log through an eigendecomposition."""
    w, v = np.linalg.eig(g)
    if np.any(np.abs(w) < tol):
        raise GrogError(f"spoke {spoke}: singular shift operator")
    if np.any((np.abs(w.imag) <= tol * np.abs(w)) & (w.real < 0)):
        raise GrogError(f"spoke {spoke}: eigenvalue on the negative real axis (branch cut)")
    if np.linalg.cond(v) > 1.0 / tol:
        raise GrogError(f"spoke {spoke}: shift operator is not diagonalizable")
    return v @ np.diag(np.log(w)) @ np.linalg.inv(v)


def spoke_operator(s, ridge_scale=1e-6):
    """Fit ``G`` with ``s[:, r+1] ~ G s[:, r]`` plus a ridge pull towards ``I``.

    ``s`` is ``[coil, readout]``; the ridge weight is ``ridge_scale`` times
    the trace of the source Gram matrix.
    """
    src, tgt = s[:, :-1], s[:, 1:]
    gram = src @ src.conj().T
    lam = ridge_scale * np.real(np.trace(gram))
    eye = np.eye(s.shape[0])
    # G (gram + lam I) = tgt src^H + lam I
    rhs = tgt @ src.conj().T + lam * eye
    return np.linalg.solve((gram + lam * eye).T, rhs.T).T


def calibrate_grog(acq: RadialAcquisition, ridge: float = 1e-6, n_grid: int | None = None) -> GrogOperators:
    """Estimate ``log Gx`` and ``log Gy`` from the radial data itself.

    Per spoke, the readout-to-readout operator is fitted and its log is
    expressed as ``dx * log Gx + dy * log Gy``, where ``(dx, dy)`` is the
    spoke's k-step in grid cells.  The two unknown logs are solved in least
    squares over all spokes.
    """
    traj = acq.trajectory
    n_grid = n_grid or traj.n_readout
    if traj.n_spokes < 2 or np.unique(np.round(np.mod(traj.angles, np.pi), 12)).size < 2:
        raise GrogError("calibration needs at least two spokes at distinct angles")
    if traj.n_readout < acq.n_coil + 2:
        raise GrogError("calibration needs n_readout >= n_coil + 2")
    step = 2 * traj.kmax / traj.n_readout * n_grid
    logs = np.empty((traj.n_spokes, acq.n_coil, acq.n_coil), dtype=np.complex128)
    for i in range(traj.n_spokes):
        logs[i] = _logm_eig(spoke_operator(acq.samples[:, i], ridge), i)
    design = step * np.stack([np.cos(traj.angles), np.sin(traj.angles)], axis=1)
    sol, *_ = np.linalg.lstsq(design, logs.reshape(traj.n_spokes, -1), rcond=None)
    nc = acq.n_coil
    return GrogOperators(sol[0].reshape(nc, nc), sol[1].reshape(nc, nc))


def grog_shift(sample, dx, dy, ops: GrogOperators) -> np.ndarray:
    """Shift coil vector(s) by ``(dx, dy)`` grid cells: ``expm(dx Lx + dy Ly) @ s``.

    ``sample`` is ``[coil]`` or ``[n, coil]`` with matching ``dx``/``dy``
    arrays of length ``n``.
    """
    s = np.asarray(sample, dtype=np.complex128)
    dx = np.asarray(dx, dtype=np.float64)
    dy = np.asarray(dy, dtype=np.float64)
    gen = dx[..., None, None] * ops.log_gx + dy[..., None, None] * ops.log_gy
    op = scipy.linalg.expm(gen)
    return np.einsum("...ij,...j->...i", op, s)


def grid_radial(acq: RadialAcquisition, ops: GrogOperators, n_grid: int) -> GriddedKSpace:
    """Move every sample to its nearest Cartesian cell and average per cell.

    Cell ``(u, v)`` holds k = ((u - n_grid//2) / n_grid, (v - n_grid//2) / n_grid)
    in (ky, kx).  Samples whose nearest cell lies outside the grid are dropped.
    Accumulation runs in spoke order.
    """
    kx, ky = acq.trajectory.kspace()
    gx = kx.ravel() * n_grid + n_grid // 2
    gy = ky.ravel() * n_grid + n_grid // 2
    cx = np.rint(gx).astype(int)
    cy = np.rint(gy).astype(int)
    keep = (cx >= 0) & (cx < n_grid) & (cy >= 0) & (cy < n_grid)
    samples = acq.samples.reshape(acq.n_coil, -1).T  # [spoke*readout, coil]
    shifted = grog_shift(samples[keep], cx[keep] - gx[keep], cy[keep] - gy[keep], ops)

    flat = cy[keep] * n_grid + cx[keep]
    acc = np.zeros((acq.n_coil, n_grid * n_grid), dtype=np.complex128)
    for c in range(acq.n_coil):
        np.add.at(acc[c], flat, shifted[:, c])
    hits = np.bincount(flat, minlength=n_grid * n_grid)
    nz = hits > 0
    acc[:, nz] /= hits[nz]
    grid = acc.reshape(acq.n_coil, 1, n_grid, n_grid)
    return GriddedKSpace(grid, hits.reshape(n_grid, n_grid), int(np.count_nonzero(~keep)))
