"""Pluggable priors for the sampling loop.

* noise predictors: ``predictor(y_t, t) -> eps_hat``
* x-t models: ``model(image_seq, t) -> image_seq`` on ``[1, time, row, col]``
* k-t kernels: linear centre-excluded multi-coil kernels fitted on ACS data
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .tensor import fftc, ifftc, load_cplx, save_cplx

NoisePredictor = Callable[[np.ndarray, int], np.ndarray]
XtModel = Callable[[np.ndarray, int], np.ndarray]


class OraclePredictor:
    """Returns the noise that separates ``y_t`` from the known ``y0``."""

    def __init__(self, y0, sched):
        self.y0 = np.asarray(y0)
        self.sched = sched

    def __call__(self, y_t, t):
        if t < 1:
            raise ValueError("oracle predictor is undefined at t = 0")
        ab = self.sched.alpha_bar[t]
        return (y_t - np.sqrt(ab) * self.y0) / np.sqrt(1.0 - ab)


class ZeroPredictor:
    def __call__(self, y_t, t):
        return np.zeros_like(y_t)


def soft_shrink(v, tau):
    """Complex soft threshold ``v * max(1 - tau / |v|, 0)``."""
    v = np.asarray(v)
    mag = np.abs(v)
    keep = mag > tau
    scale = np.zeros(mag.shape)
    np.divide(tau, mag, out=scale, where=keep)
    return np.where(keep, v * (1.0 - scale), 0)


def xf_soft_threshold(x, tau: float) -> np.ndarray:
    """Soft-threshold the temporal spectrum of every pixel, DC bin untouched."""
    x = np.asarray(x)
    if tau < 0:
        raise ValueError("tau must be >= 0")
    if x.shape[1] < 2:
        raise ValueError("x-f thresholding needs at least two frames")
    if tau == 0:
        return x.copy()
    spec = fftc(x, axis=1)
    spec[:, 1:] = soft_shrink(spec[:, 1:], tau)
    return ifftc(spec, axis=1)


class XfSoftPrior:
    """x-t model built on :func:`xf_soft_threshold`.

    ``tau`` is the fixed temporal-sparsity threshold.  When a schedule is
    attached, every x-f coefficient (DC included) is additionally shrunk by
    ``noise_gain * sqrt((1 - abar_t) / abar_t)``, the noise level that a
    clean estimate carries at step ``t``.
    """

    def __init__(self, tau: float, sched=None, noise_gain: float = 0.0):
        self.tau = tau
        self.sched = sched
        self.noise_gain = noise_gain

    def noise_level(self, t):
        if self.sched is None or self.noise_gain == 0 or t < 1:
            return 0.0
        ab = self.sched.alpha_bar[t]
        return self.noise_gain * np.sqrt((1.0 - ab) / ab)

    def __call__(self, x, t):
        out = xf_soft_threshold(x, self.tau)
        level = self.noise_level(t)
        if level > 0:
            out = ifftc(soft_shrink(fftc(out, axis=1), level), axis=1)
        return out


@dataclass
class KtKernel:
    """Linear k-t kernel ``taps[coil_out, coil_in, kt, ky, kx]``.

    Application is a zero-padded correlation: ``out[o, t, r, c]`` sums
    ``taps[o, i, a, b, d] * y[i, t + a - ht, r + b - hy, c + d - hx]``.
    """

    taps: np.ndarray
    exclude_center: bool = True

    def __post_init__(self):
        self.taps = np.asarray(self.taps, dtype=np.complex128)
        if self.taps.ndim != 5 or self.taps.shape[0] != self.taps.shape[1]:
            raise ValueError(f"taps must be [coil, coil, kt, ky, kx], got {self.taps.shape}")
        if any(d % 2 == 0 for d in self.taps.shape[2:]):
            raise ValueError("kernel dims must be odd")
        if self.exclude_center:
            c = self.center
            diag = self.taps[np.arange(self.n_coil), np.arange(self.n_coil), c[0], c[1], c[2]]
            if np.any(diag != 0):
                raise ValueError("centre-excluded kernel has nonzero self-centre taps")

    @property
    def n_coil(self):
        return self.taps.shape[0]

    @property
    def dims(self):
        return self.taps.shape[2:]

    @property
    def center(self):
        return tuple(d // 2 for d in self.dims)

    def save(self, stem):
        nc, _, kt, ky, kx = self.taps.shape
        save_cplx(self.taps.reshape(nc * nc, kt, ky, kx), stem)
        meta = {"n_coil": nc, "dims": [kt, ky, kx], "exclude_center": self.exclude_center}
        Path(f"{stem}.json").write_text(json.dumps(meta, indent=2) + "\n")

    @classmethod
    def load(cls, stem):
        meta = json.loads(Path(f"{stem}.json").read_text())
        nc = int(meta["n_coil"])
        taps = load_cplx(stem).astype(np.complex128).reshape(nc, nc, *meta["dims"])
        return cls(taps, bool(meta["exclude_center"]))


def _offsets(dims):
    h = [d // 2 for d in dims]
    for a in range(dims[0]):
        for b in range(dims[1]):
            for c in range(dims[2]):
                yield (a, b, c), (a - h[0], b - h[1], c - h[2])


def _shifted(y, off):
    """``out[..., t, r, c] = y[..., t + dt, r + dr, c + dc]`` with zero padding."""
    out = np.zeros_like(y)
    src, dst = [], []
    for size, o in zip(y.shape[-3:], off):
        if o >= 0:
            src.append(slice(o, size))
            dst.append(slice(0, size - o))
        else:
            src.append(slice(0, size + o))
            dst.append(slice(-o, size))
    out[(Ellipsis, *dst)] = y[(Ellipsis, *src)]
    return out


def fit_kt_kernel(y_acs, dims=(3, 3, 3), ridge: float = 1e-6) -> KtKernel:
    """Ridge least-squares fit of a centre-excluded self-consistency kernel.

    Every interior ACS sample (half-kernel margin on each axis) is predicted
    from its neighbourhood across all coils, leaving out the sample itself.
    ``ridge`` is an absolute Tikhonov weight on the normal equations.
    """
    y = np.asarray(y_acs, dtype=np.complex128)
    dims = tuple(int(d) for d in dims)
    if any(d % 2 == 0 for d in dims):
        raise ValueError("kernel dims must be odd")
    if ridge <= 0:
        raise ValueError("ridge must be > 0")
    if any(s < d for s, d in zip(y.shape[1:], dims)):
        raise ValueError(f"ACS block {y.shape[1:]} smaller than kernel {dims}")
    nc = y.shape[0]
    h = [d // 2 for d in dims]
    interior = tuple(slice(hh, s - hh) for hh, s in zip(h, y.shape[1:]))
    cols = []
    offs = list(_offsets(dims))
    for _, off in offs:
        cols.append(_shifted(y, off)[(slice(None), *interior)].reshape(nc, -1))
    # source matrix [n_eq, n_offsets * nc], ordered (offset, coil_in)
    src = np.stack(cols, axis=0).reshape(len(offs) * nc, -1).T
    gram = src.conj().T @ src
    centre = [i for i, (idx, _) in enumerate(offs) if idx == tuple(h)][0]
    taps = np.zeros((nc, nc, *dims), dtype=np.complex128)
    for co in range(nc):
        target = y[(co, *interior)].ravel()
        keep = np.ones(src.shape[1], dtype=bool)
        keep[centre * nc + co] = False
        g = gram[np.ix_(keep, keep)] + ridge * np.eye(keep.sum())
        rhs = src[:, keep].conj().T @ target
        try:
            w = np.linalg.solve(g, rhs)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(f"singular normal matrix for coil {co}") from exc
        full = np.zeros(src.shape[1], dtype=np.complex128)
        full[keep] = w
        for k, (idx, _) in enumerate(offs):
            taps[co, :, idx[0], idx[1], idx[2]] = full[k * nc:(k + 1) * nc]
    return KtKernel(taps, exclude_center=True)


def apply_kt_kernel(y, kernel: KtKernel, blend_mask=None) -> np.ndarray:
    """Apply the kernel to ``[coil, time, row, col]`` data.

    With ``blend_mask`` (a :class:`~dynrec.encoding.SamplingMask` or boolean
    ``[time, row, col]`` array) the sampled entries are restored from ``y``.
    """
    y = np.asarray(y)
    if y.ndim != 4 or y.shape[0] != kernel.n_coil:
        raise ValueError(f"data {y.shape} do not match a {kernel.n_coil}-coil kernel")
    out = np.zeros(y.shape, dtype=np.complex128)
    for idx, off in _offsets(kernel.dims):
        w = kernel.taps[:, :, idx[0], idx[1], idx[2]]
        if not np.any(w):
            continue
        out += np.einsum("oi,i...->o...", w, _shifted(y, off))
    if blend_mask is not None:
        m = getattr(blend_mask, "mask", blend_mask)
        m = np.asarray(m, dtype=bool)
        if m.shape != y.shape[1:]:
            raise ValueError(f"blend mask {m.shape} does not match data {y.shape}")
        out = np.where(m[None], y, out)
    return out


@dataclass
class PriorStack:
    """Noise predictor plus optional x-t model and k-t kernel (``None`` = identity)."""

    predictor: NoisePredictor
    xt: Optional[XtModel] = None
    kt: Optional[KtKernel] = None
    kt_blend: bool = True
