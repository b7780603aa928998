"""Cartesian masks, golden-angle radial acquisition, motion signals and binning."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoding import SamplingMask

GOLDEN_ANGLE = np.pi * (np.sqrt(5.0) - 1.0) / 2.0
KMAX = 0.5


@dataclass
class MaskSpec:
    n_row: int
    n_time: int
    accel: float
    acs_frac: float
    density_power: float = 3.0
    per_frame: bool = True
    seed: int = 0
    n_col: int | None = None

    @property
    def budget(self) -> int:
        return int(np.floor(self.n_row / self.accel))

    @property
    def n_acs(self) -> int:
        return int(round(self.acs_frac * self.n_row))

    def validate(self):
        if self.n_row < 1 or self.n_time < 1:
            raise ValueError("n_row and n_time must be positive")
        if self.accel < 1:
            raise ValueError(f"acceleration must be >= 1, got {self.accel}")
        if not 0 < self.acs_frac < 1:
            raise ValueError(f"acs_frac must lie in (0, 1), got {self.acs_frac}")
        if self.density_power < 0:
            raise ValueError("density_power must be >= 0")
        if self.n_acs > self.budget:
            raise ValueError(
                f"infeasible mask: {self.n_acs} ACS rows exceed the budget of {self.budget} rows"
            )


def acs_range(n_row: int, n_acs: int) -> tuple:
    start = n_row // 2 - n_acs // 2
    return start, start + n_acs


def make_vd_mask(spec: MaskSpec) -> SamplingMask:
    """1D variable-density row mask with a fully sampled centre.

    Each frame samples exactly ``floor(n_row / accel)`` rows: the ACS block
    plus rows drawn without replacement with probability proportional to
    ``(1 - |k| / kmax) ** density_power``.  ``kmax`` sits one row beyond the
    outermost line so every row keeps a nonzero probability.
    """
    spec.validate()
    n_col = spec.n_col or spec.n_row
    rng = np.random.default_rng(spec.seed)
    start, stop = acs_range(spec.n_row, spec.n_acs)
    k = np.abs(np.arange(spec.n_row) - spec.n_row // 2)
    weight = (1.0 - k / (spec.n_row // 2 + 1)) ** spec.density_power
    outer = np.ones(spec.n_row, dtype=bool)
    outer[start:stop] = False
    candidates = np.flatnonzero(outer)
    p = weight[candidates] / weight[candidates].sum()
    n_draw = spec.budget - spec.n_acs

    rows = np.zeros((spec.n_time, spec.n_row), dtype=bool)
    rows[:, start:stop] = True
    for t in range(spec.n_time if spec.per_frame else 1):
        picked = rng.choice(candidates, size=n_draw, replace=False, p=p)
        rows[t, picked] = True
    if not spec.per_frame:
        rows[:] = rows[0]
    mask = np.repeat(rows[:, :, None], n_col, axis=2)
    return SamplingMask(mask, (start, stop))


def golden_angle_angles(n_spokes: int) -> np.ndarray:
    if n_spokes < 1:
        raise ValueError("n_spokes must be >= 1")
    return np.mod(np.arange(n_spokes) * GOLDEN_ANGLE, np.pi)


@dataclass
class RadialTrajectory:
    n_spokes: int
    n_readout: int
    angles: np.ndarray = None
    timestamps: np.ndarray = None
    kmax: float = KMAX

    def __post_init__(self):
        if self.angles is None:
            self.angles = golden_angle_angles(self.n_spokes)
        self.angles = np.asarray(self.angles, dtype=np.float64)
        if self.timestamps is None:
            self.timestamps = np.arange(self.n_spokes, dtype=np.float64)
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        if self.angles.shape != (self.n_spokes,) or self.timestamps.shape != (self.n_spokes,):
            raise ValueError("angles and timestamps need one entry per spoke")
        if np.any(np.diff(self.timestamps) < 0):
            raise ValueError("timestamps must be monotone")

    def readout_k(self) -> np.ndarray:
        """Radial k positions in cycles/pixel; index ``n_readout // 2`` is k = 0."""
        return (np.arange(self.n_readout) - self.n_readout // 2) * (2 * self.kmax / self.n_readout)

    def kspace(self) -> tuple:
        """``(kx, ky)`` arrays ``[spoke, readout]`` in cycles/pixel."""
        k = self.readout_k()
        return np.outer(np.cos(self.angles), k), np.outer(np.sin(self.angles), k)

    def subset(self, idx):
        return RadialTrajectory(len(idx), self.n_readout, self.angles[idx], self.timestamps[idx], self.kmax)


@dataclass
class RadialAcquisition:
    trajectory: RadialTrajectory
    samples: np.ndarray  # [coil, spoke, readout]
    ortho: bool = False

    def __post_init__(self):
        s = np.asarray(self.samples)
        expect = (self.trajectory.n_spokes, self.trajectory.n_readout)
        if s.ndim != 3 or s.shape[1:] != expect:
            raise ValueError(f"samples {s.shape} do not match trajectory {expect}")
        self.samples = s

    @property
    def n_coil(self):
        return self.samples.shape[0]

    @property
    def n_spokes(self):
        return self.trajectory.n_spokes

    @property
    def timestamps(self):
        return self.trajectory.timestamps


def _complex_noise(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def acquire_radial(frames, traj: RadialTrajectory, sens, noise_sd=0.0, seed=0, ortho=False) -> RadialAcquisition:
    """Simulate multi-coil radial samples by direct Fourier summation.

    ``frames`` is either a callable ``f(timestamp) -> image[row, col]`` or a
    sequence holding one image per spoke.  Pixel coordinates are taken
    relative to ``(n_row // 2, n_col // 2)``, the same origin as
    :func:`~dynrec.tensor.fft2c`.  With ``ortho=True`` the sums are scaled by
    ``1 / sqrt(n_row * n_col)`` so on-grid samples equal ``fft2c`` values.
    """
    sens = np.asarray(sens)
    n_coil, n_row, n_col = sens.shape
    if callable(frames):
        get = lambda i: frames(traj.timestamps[i])  # noqa: E731
    else:
        if len(frames) != traj.n_spokes:
            raise ValueError(f"{len(frames)} frames for {traj.n_spokes} spokes")
        get = lambda i: frames[i]  # noqa: E731
    kx, ky = traj.kspace()
    py = np.arange(n_row) - n_row // 2
    px = np.arange(n_col) - n_col // 2
    scale = 1.0 / np.sqrt(n_row * n_col) if ortho else 1.0
    out = np.empty((n_coil, traj.n_spokes, traj.n_readout), dtype=np.complex128)
    for i in range(traj.n_spokes):
        img = np.asarray(get(i))
        if img.shape != (n_row, n_col):
            raise ValueError(f"frame {i} has shape {img.shape}, expected {(n_row, n_col)}")
        ex = np.exp(-2j * np.pi * np.outer(px, kx[i]))  # [col, readout]
        ey = np.exp(-2j * np.pi * np.outer(py, ky[i]))  # [row, readout]
        coil_img = sens * img
        tmp = coil_img @ ex  # [coil, row, readout]
        out[:, i] = np.einsum("crk,rk->ck", tmp, ey) * scale
    if noise_sd > 0:
        rng = np.random.default_rng(seed)
        out = out + noise_sd * _complex_noise(rng, out.shape)
    return RadialAcquisition(traj, out, ortho)


@dataclass
class MotionSignal:
    values: np.ndarray
    smooth_len: int = 1


def estimate_motion_signal(acq: RadialAcquisition, smooth_len: int = 1) -> MotionSignal:
    """Coil-combined k-space centre magnitude per spoke, moving-averaged."""
    if smooth_len < 1 or smooth_len % 2 == 0:
        raise ValueError("smooth_len must be odd and >= 1")
    if smooth_len > acq.n_spokes:
        raise ValueError(f"smooth_len {smooth_len} exceeds {acq.n_spokes} spokes")
    centre = acq.samples[:, :, acq.trajectory.n_readout // 2]
    raw = np.sqrt(np.sum(np.abs(centre) ** 2, axis=0))
    if smooth_len == 1:
        return MotionSignal(raw, 1)
    half = smooth_len // 2
    # centred moving average; edges average over the available neighbours
    csum = np.concatenate([[0.0], np.cumsum(raw)])
    idx = np.arange(raw.size)
    lo = np.maximum(idx - half, 0)
    hi = np.minimum(idx + half + 1, raw.size)
    return MotionSignal((csum[hi] - csum[lo]) / (hi - lo), smooth_len)


@dataclass
class BinPlan:
    bins: list = field(default_factory=list)  # [(anchor_index, [spoke, ...]), ...]
    window_size: int = 0
    n_states: int = 0
    mode: str = "sliding"

    def to_text(self) -> str:
        return "".join(f"{a}: {','.join(str(s) for s in spokes)}\n" for a, spokes in self.bins)

    @classmethod
    def from_text(cls, text: str) -> "BinPlan":
        bins = []
        for line in text.splitlines():
            if not line.strip():
                continue
            anchor, sep, rest = line.partition(":")
            if not sep:
                raise ValueError(f"malformed bin line {line!r}")
            spokes = [int(s) for s in rest.split(",") if s.strip()]
            bins.append((int(anchor), spokes))
        window = len(bins[0][1]) if bins else 0
        return cls(bins, window, len(bins))

    def save(self, path):
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path):
        return cls.from_text(Path(path).read_text())


def _nearest(values, target, k, pool=None):
    """Indices of the ``k`` values nearest ``target``; ties go to earlier spokes."""
    pool = np.arange(values.size) if pool is None else np.asarray(pool)
    order = np.lexsort((pool, np.abs(values[pool] - target)))
    return np.sort(pool[order[:k]])


def bin_spokes(signal, n_states: int, window_size: int, mode: str = "sliding") -> BinPlan:
    """Group spokes into motion states by signal amplitude.

    ``fixed`` splits the spokes into ``n_states`` equal-count amplitude bands
    and keeps, per band, the ``window_size`` spokes nearest the band's median
    amplitude, so bins never overlap.  ``sliding`` puts anchors on an evenly
    spaced amplitude grid from min to max and takes the ``window_size``
    nearest spokes around each anchor; neighbouring bins may share spokes.
    """
    values = np.asarray(signal.values if isinstance(signal, MotionSignal) else signal, dtype=np.float64)
    n = values.size
    if n == 0:
        raise ValueError("empty motion signal")
    if n_states < 1:
        raise ValueError("n_states must be >= 1")
    if not 1 <= window_size <= n:
        raise ValueError(f"window_size must lie in 1..{n}")
    bins = []
    if mode == "fixed":
        if window_size * n_states > n:
            raise ValueError(
                f"fixed binning needs {window_size * n_states} spokes, only {n} available"
            )
        order = np.lexsort((np.arange(n), values))
        bands = np.array_split(order, n_states)
        for band in bands:
            centre = np.median(values[band])
            chosen = _nearest(values, centre, window_size, pool=band)
            anchor = int(_nearest(values, centre, 1, pool=band)[0])
            bins.append((anchor, chosen.tolist()))
    elif mode == "sliding":
        grid = np.linspace(values.min(), values.max(), n_states) if n_states > 1 else [np.median(values)]
        for level in grid:
            chosen = _nearest(values, level, window_size)
            anchor = int(_nearest(values, level, 1)[0])
            bins.append((anchor, chosen.tolist()))
    else:
        raise ValueError(f"unknown binning mode {mode!r}")
    return BinPlan(bins, window_size, n_states, mode)


def sort_bin_to_kspace(acq: RadialAcquisition, spokes) -> RadialAcquisition:
    """Sub-acquisition holding ``spokes`` in the given order."""
    idx = np.asarray(spokes, dtype=int)
    if idx.size == 0:
        raise ValueError("empty spoke list")
    if idx.min() < 0 or idx.max() >= acq.n_spokes:
        raise IndexError(f"spoke index out of range 0..{acq.n_spokes - 1}")
    return RadialAcquisition(acq.trajectory.subset(idx), acq.samples[:, idx], acq.ortho)


def write_trajectory_csv(traj: RadialTrajectory, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "angle_rad", "timestamp_s"])
        for i, (a, ts) in enumerate(zip(traj.angles, traj.timestamps)):
            w.writerow([i, repr(float(a)), repr(float(ts))])


def read_trajectory_csv(path, n_readout: int) -> RadialTrajectory:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    angles = np.array([float(r["angle_rad"]) for r in rows])
    ts = np.array([float(r["timestamp_s"]) for r in rows])
    return RadialTrajectory(len(rows), n_readout, angles, ts)
