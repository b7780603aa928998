"""Synthetic dynamic ground truth: phantoms, coil maps and motion waveforms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class PhantomSpec:
    """Parameters of a dynamic phantom.

    ``amplitude`` is a radius fraction in cardiac mode and a row shift in
    pixels in respiratory mode.  ``period`` is in frames (or spokes, when the
    phantom is sampled per spoke); ``None`` means one cycle over ``n_time``.
    """

    n_row: int = 64
    n_col: int = 64
    n_time: int = 8
    mode: str = "cardiac"
    amplitude: float | None = None
    period: float | None = None
    edge: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("cardiac", "respiratory"):
            raise ValueError(f"unknown phantom mode {self.mode!r}")
        if min(self.n_row, self.n_col) < 16 or self.n_time < 1:
            raise ValueError("phantom needs at least 16x16 pixels and one frame")
        if self.amplitude is None:
            self.amplitude = 0.3 if self.mode == "cardiac" else 0.08 * self.n_row
        if self.period is None:
            self.period = float(self.n_time)
        if self.period <= 0:
            raise ValueError("period must be positive")
        if self.mode == "cardiac" and not 0 <= self.amplitude < 0.6:
            raise ValueError("cardiac amplitude must be a radius fraction in [0, 0.6)")
        if self.mode == "respiratory" and abs(self.amplitude) > 0.1 * self.n_row:
            raise ValueError("respiratory amplitude would push the lungs outside the body")


def _edge_weight(dist, width):
    """Raised-cosine inside weight: 1 well inside, 0 well outside."""
    if width <= 0:
        return (dist <= 0).astype(np.float64)
    s = np.clip(dist / width, -0.5, 0.5)
    return 0.5 * (1.0 - np.sin(np.pi * s))


def _ellipse(yy, xx, cy, cx, ry, rx, width):
    rho = np.sqrt(((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2)
    return _edge_weight((rho - 1.0) * np.sqrt(ry * rx), width)


def _grid(spec):
    yy, xx = np.meshgrid(
        np.arange(spec.n_row) - spec.n_row // 2,
        np.arange(spec.n_col) - spec.n_col // 2,
        indexing="ij",
    )
    return yy.astype(np.float64), xx.astype(np.float64)


def _paint(img, weight, value):
    return img * (1.0 - weight) + value * weight


def _blobs(spec, half):
    # small static features, positioned by the seed
    rng = np.random.default_rng(spec.seed)
    out = []
    for _ in range(3):
        ang = rng.uniform(0, 2 * np.pi)
        rad = rng.uniform(0.45, 0.6) * half
        out.append((rad * np.sin(ang), rad * np.cos(ang), rng.uniform(0.04, 0.07) * half, rng.uniform(0.5, 0.7)))
    return out


def phantom_frame(spec: PhantomSpec, t: float) -> np.ndarray:
    """Real image ``[row, col]`` of the phantom at (possibly fractional) time ``t``."""
    yy, xx = _grid(spec)
    h = min(spec.n_row, spec.n_col) / 2.0
    w = spec.edge
    phase = np.sin(2 * np.pi * t / spec.period)
    img = np.zeros((spec.n_row, spec.n_col))
    if spec.mode == "cardiac":
        img = _paint(img, _ellipse(yy, xx, 0, 0, 0.85 * h, 0.72 * h, w), 0.25)
        for cy, cx, r, v in _blobs(spec, 0.72 * h):
            img = _paint(img, _ellipse(yy, xx, cy, cx, r, r, w), v)
        cy, cx = -0.05 * h, 0.08 * h
        img = _paint(img, _ellipse(yy, xx, cy, cx, 0.36 * h, 0.36 * h, w), 0.55)
        r_in = 0.22 * h * (1.0 + spec.amplitude * phase)
        img = _paint(img, _ellipse(yy, xx, cy, cx, r_in, r_in, w), 1.0)
        # right ventricle contracts in anti-phase
        r_rv = 0.13 * h * (1.0 - 0.5 * spec.amplitude * phase)
        img = _paint(img, _ellipse(yy, xx, cy + 0.05 * h, cx - 0.5 * h, 1.3 * r_rv, r_rv, w), 0.85)
    else:
        img = _paint(img, _ellipse(yy, xx, 0, 0, 0.88 * h, 0.8 * h, w), 0.4)
        for cy, cx, r, v in _blobs(spec, 0.8 * h)[:1]:
            img = _paint(img, _ellipse(yy, xx, 0.55 * h, cx, r, r, w), v)
        dy = spec.amplitude * phase
        img = _paint(img, _ellipse(yy, xx, 0.38 * h + dy, 0.1 * h, 0.22 * h, 0.5 * h, w), 0.8)
        img = _paint(img, _ellipse(yy, xx, -0.12 * h + dy, -0.36 * h, 0.42 * h, 0.2 * h, w), 0.08)
        img = _paint(img, _ellipse(yy, xx, -0.12 * h + dy, 0.32 * h, 0.4 * h, 0.22 * h, w), 0.08)
    return np.clip(img, 0.0, 1.0)


def dynamic_phantom(spec: PhantomSpec) -> np.ndarray:
    """Image sequence ``[1, n_time, n_row, n_col]`` (complex dtype, real values)."""
    frames = [phantom_frame(spec, t) for t in range(spec.n_time)]
    return np.stack(frames)[None].astype(np.complex128)


def synth_coilmaps(n_row: int, n_col: int, n_coil: int, seed: int = 0) -> np.ndarray:
    """Gaussian-lobe coil maps ``[coil, row, col]`` with ``sum |S_c|^2 = 1``."""
    if n_coil < 1:
        raise ValueError("n_coil must be >= 1")
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(
        np.arange(n_row) - n_row // 2, np.arange(n_col) - n_col // 2, indexing="ij"
    )
    offset = rng.uniform(0, 2 * np.pi / n_coil)
    width = 0.6 * max(n_row, n_col)
    maps = np.empty((n_coil, n_row, n_col), dtype=np.complex128)
    for c in range(n_coil):
        ang = offset + 2 * np.pi * c / n_coil
        py, px = 0.5 * n_row * np.sin(ang), 0.5 * n_col * np.cos(ang)
        gain = rng.uniform(0.7, 1.3)
        mag = gain * np.exp(-((yy - py) ** 2 + (xx - px) ** 2) / (2 * width**2))
        gy, gx = rng.uniform(-0.5, 0.5, size=2)
        phase = rng.uniform(0, 2 * np.pi) + 2 * np.pi * (gy * yy / n_row + gx * xx / n_col)
        maps[c] = mag * np.exp(1j * phase)
    rss = np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))
    return maps / rss


def motion_waveform(n: int, period: float, kind: str = "sine", seed: int = 0, jitter: float = 0.0) -> np.ndarray:
    """Unit-amplitude periodic waveform sampled at ``i = 0 .. n-1``.

    With ``jitter > 0`` every cycle gets its own period drawn uniformly from
    ``period * (1 +- jitter)``.
    """
    if period <= 1:
        raise ValueError("period must exceed 1 sample")
    if kind not in ("sine", "sawtooth"):
        raise ValueError(f"unknown waveform kind {kind!r}")
    if jitter:
        rng = np.random.default_rng(seed)
        phase = np.empty(n)
        acc, cycle_start, cycle_period = 0.0, 0, period * rng.uniform(1 - jitter, 1 + jitter)
        for i in range(n):
            phase[i] = acc
            acc += 1.0 / cycle_period
            if int(acc) > cycle_start:
                cycle_start = int(acc)
                cycle_period = period * rng.uniform(1 - jitter, 1 + jitter)
    else:
        phase = np.arange(n) / period
    if kind == "sine":
        return np.sin(2 * np.pi * phase)
    return 2.0 * (phase - np.floor(phase)) - 1.0
