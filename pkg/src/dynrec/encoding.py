"""Multi-coil Cartesian encoding ``A = M F S`` and its adjoint."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import fft2c, ifft2c


@dataclass
class SamplingMask:
    """Binary Cartesian mask ``[time, row, col]`` plus the ACS row range.

    ``acs_rows`` is a half-open ``(start, stop)`` row interval that every
    frame samples.
    """

    mask: np.ndarray
    acs_rows: tuple = (0, 0)

    def __post_init__(self):
        m = np.asarray(self.mask)
        if m.ndim != 3:
            raise ValueError(f"mask must be [time,row,col], got shape {m.shape}")
        if not np.all((m == 0) | (m == 1)):
            raise ValueError("mask values must be 0 or 1")
        self.mask = m.astype(bool)
        start, stop = (int(v) for v in self.acs_rows)
        if not 0 <= start <= stop <= m.shape[1]:
            raise ValueError(f"acs_rows {self.acs_rows} outside 0..{m.shape[1]}")
        self.acs_rows = (start, stop)

    @property
    def shape(self):
        return self.mask.shape

    @property
    def n_acs(self) -> int:
        return self.acs_rows[1] - self.acs_rows[0]

    def weights(self) -> np.ndarray:
        """Float mask broadcastable against ``[coil, time, row, col]``."""
        return self.mask[None].astype(np.float64)

    @classmethod
    def full(cls, n_time, n_row, n_col):
        return cls(np.ones((n_time, n_row, n_col), dtype=bool), (0, n_row))


@dataclass
class EncodingOperator:
    sens: np.ndarray
    mask: SamplingMask

    def __post_init__(self):
        self.sens = np.asarray(self.sens)
        if self.sens.ndim != 3:
            raise ValueError(f"coil maps must be [coil,row,col], got {self.sens.shape}")
        if self.sens.shape[1:] != self.mask.shape[1:]:
            raise ValueError(f"maps {self.sens.shape} and mask {self.mask.shape} disagree spatially")

    @property
    def n_coil(self):
        return self.sens.shape[0]

    @property
    def image_shape(self):
        t, r, c = self.mask.shape
        return (1, t, r, c)

    @property
    def kspace_shape(self):
        t, r, c = self.mask.shape
        return (self.n_coil, t, r, c)

    def forward(self, x):
        return forward(self, x)

    def adjoint(self, y):
        return adjoint(self, y)


def coil_expand(x, sens) -> np.ndarray:
    """``out[c, t] = S_c * x[t]`` for an image sequence ``[1, time, row, col]``."""
    x = np.asarray(x)
    sens = np.asarray(sens)
    if x.ndim != 4 or x.shape[0] != 1:
        raise ValueError(f"image sequence must be [1,time,row,col], got {x.shape}")
    if sens.shape[1:] != x.shape[2:]:
        raise ValueError(f"maps {sens.shape} do not match image {x.shape}")
    return sens[:, None] * x


def coil_combine(y, sens) -> np.ndarray:
    """``out[t] = sum_c conj(S_c) * y[c, t]``; adjoint of :func:`coil_expand`."""
    y = np.asarray(y)
    sens = np.asarray(sens)
    if y.ndim != 4 or y.shape[0] != sens.shape[0] or y.shape[2:] != sens.shape[1:]:
        raise ValueError(f"data {y.shape} do not match maps {sens.shape}")
    return np.sum(np.conj(sens)[:, None] * y, axis=0, keepdims=True)


def apply_mask(y, m: SamplingMask) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 4 or y.shape[1:] != m.shape:
        raise ValueError(f"data {y.shape} do not match mask {m.shape}")
    return np.where(m.mask[None], y, 0)


def forward(A: EncodingOperator, x) -> np.ndarray:
    """``M F S x``; unsampled entries are exactly zero."""
    x = np.asarray(x)
    if x.shape != A.image_shape:
        raise ValueError(f"image {x.shape} does not match operator {A.image_shape}")
    return apply_mask(fft2c(coil_expand(x, A.sens)), A.mask)


def adjoint(A: EncodingOperator, y) -> np.ndarray:
    """``S^H F^H M y``; the zero-filled reconstruction of measured data."""
    y = np.asarray(y)
    if y.shape != A.kspace_shape:
        raise ValueError(f"k-space {y.shape} does not match operator {A.kspace_shape}")
    return coil_combine(ifft2c(apply_mask(y, A.mask)), A.sens)


def to_image(y, sens) -> np.ndarray:
    """``S^H F^H y`` without masking."""
    return coil_combine(ifft2c(y), sens)


def to_kspace(x, sens) -> np.ndarray:
    """``F S x`` without masking."""
    return fft2c(coil_expand(x, sens))


def power_norm(A: EncodingOperator, n_iter=50, seed=0) -> float:
    """Estimate ``||A||_2`` by power iteration on ``A^H A``."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(A.image_shape) + 1j * rng.standard_normal(A.image_shape)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(n_iter):
        z = adjoint(A, forward(A, x))
        lam = np.linalg.norm(z)
        if lam == 0:
            return 0.0
        x = z / lam
    return float(np.sqrt(lam))
