"""Image quality metrics on magnitude frames."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

PSNR_CAP = 99.0
NMSE_EXACT = 1e-12


def _pair(x, ref):
    x, ref = np.asarray(x), np.asarray(ref)
    if x.shape != ref.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {ref.shape}")
    return x, ref


def nmse(x, ref) -> float:
    """``||x - ref||^2 / ||ref||^2`` (complex inputs allowed)."""
    x, ref = _pair(x, ref)
    den = float(np.sum(np.abs(ref) ** 2))
    if den == 0:
        raise ValueError("reference is all zero")
    return float(np.sum(np.abs(x - ref) ** 2)) / den


def psnr(x, ref) -> float:
    """PSNR in dB with peak ``max(ref)``; returns 99 when the inputs agree (NMSE < 1e-12)."""
    x, ref = _pair(x, ref)
    x, ref = np.abs(x).astype(np.float64), np.abs(ref).astype(np.float64)
    if nmse(x, ref) < NMSE_EXACT:
        return PSNR_CAP
    mse = np.mean((x - ref) ** 2)
    return float(10.0 * np.log10(ref.max() ** 2 / mse))


def ssim(x, ref, win: int = 7, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM over ``win x win`` uniform windows, ``L = max(ref)``.

    Windows are fully inside the frame (no padding); local statistics use
    population (1/N) moments.
    """
    x, ref = _pair(x, ref)
    x, ref = np.abs(x).astype(np.float64), np.abs(ref).astype(np.float64)
    if x.ndim != 2 or min(x.shape) < win:
        raise ValueError(f"ssim needs 2D frames of at least {win}x{win}")
    L = ref.max()
    if L == 0:
        # all-zero reference: identical inputs score 1, anything else 0
        return 1.0 if np.array_equal(x, ref) else 0.0
    c1, c2 = (k1 * L) ** 2, (k2 * L) ** 2
    f = lambda a: ndimage.uniform_filter(a, size=win, mode="reflect")  # noqa: E731
    mx, my = f(x), f(ref)
    sxx = f(x * x) - mx * mx
    syy = f(ref * ref) - my * my
    sxy = f(x * ref) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    h = win // 2
    valid = (slice(h, x.shape[0] - h), slice(h, x.shape[1] - h))
    return float(np.mean(num[valid] / den[valid]))


def tenengrad(x) -> float:
    """Mean ``Gx^2 + Gy^2`` (3x3 Sobel) over interior pixels of ``|x| / max|x|``."""
    x = np.abs(np.asarray(x)).astype(np.float64)
    if x.ndim != 2 or min(x.shape) < 3:
        raise ValueError("tenengrad needs 2D frames of at least 3x3")
    peak = x.max()
    if peak > 0:
        x = x / peak
    gx = ndimage.sobel(x, axis=1, mode="nearest")[1:-1, 1:-1]
    gy = ndimage.sobel(x, axis=0, mode="nearest")[1:-1, 1:-1]
    return float(np.mean(gx**2 + gy**2))


@dataclass
class MetricReport:
    psnr: np.ndarray
    ssim: np.ndarray
    nmse: np.ndarray
    tenengrad: np.ndarray

    def summary(self) -> dict:
        out = {}
        for name in ("psnr", "ssim", "nmse", "tenengrad"):
            v = getattr(self, name)
            out[name] = (float(np.mean(v)), float(np.std(v)))
        return out

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame", "psnr", "ssim", "nmse", "tenengrad"])
            for i in range(len(self.psnr)):
                w.writerow([i] + [repr(float(getattr(self, n)[i])) for n in ("psnr", "ssim", "nmse", "tenengrad")])
            s = self.summary()
            w.writerow(["mean"] + [repr(s[n][0]) for n in ("psnr", "ssim", "nmse", "tenengrad")])
            w.writerow(["std"] + [repr(s[n][1]) for n in ("psnr", "ssim", "nmse", "tenengrad")])


def _frames(x):
    a = np.asarray(x)
    if a.ndim == 4:
        if a.shape[0] != 1:
            raise ValueError("score coil-combined image sequences [1, time, row, col]")
        a = a[0]
    if a.ndim == 2:
        a = a[None]
    return np.abs(a)


def evaluate(x, ref) -> MetricReport:
    """Per-frame metrics of an image sequence against a reference sequence."""
    xs, rs = _frames(x), _frames(ref)
    if xs.shape != rs.shape:
        raise ValueError(f"shape mismatch: {xs.shape} vs {rs.shape}")
    return MetricReport(
        np.array([psnr(a, b) for a, b in zip(xs, rs)]),
        np.array([ssim(a, b) for a, b in zip(xs, rs)]),
        np.array([nmse(a, b) for a, b in zip(xs, rs)]),
        np.array([tenengrad(a) for a in xs]),
    )
