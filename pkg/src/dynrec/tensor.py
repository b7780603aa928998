"""Complex 4D tensors, centered 2D FFTs and the ``.hdr``/``.cplx`` file pair.

Every array handled by the package is a complex ndarray indexed
``[coil, time, row, col]``.  Image sequences use ``n_coil = 1``.
"""

from __future__ import annotations

import functools
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft

ORDER = "coil,time,row,col"
DTYPE_TAG = "complex-float32"
_RESERVED = ("dims", "dtype", "order")

# scipy.fft worker count; pocketfft splits over independent 1D transforms,
# so the result does not depend on this value.
_workers = 1


def set_workers(n: int) -> None:
    global _workers
    _workers = max(1, int(n))


class TensorFileError(OSError):
    """Base class for tensor file failures."""


class MissingFileError(TensorFileError, FileNotFoundError):
    pass


class HeaderError(TensorFileError, ValueError):
    pass


class SizeMismatchError(TensorFileError, ValueError):
    pass


@dataclass
class TensorHeader:
    dims: tuple
    dtype: str = DTYPE_TAG
    order: str = ORDER
    meta: dict = field(default_factory=dict)

    @property
    def payload_bytes(self) -> int:
        return int(np.prod(self.dims)) * 8

    def to_text(self) -> str:
        lines = [
            "dims: " + ",".join(str(d) for d in self.dims),
            f"dtype: {self.dtype}",
            f"order: {self.order}",
        ]
        for key, value in self.meta.items():
            lines.append(f"{key}: {value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, path="<header>") -> "TensorHeader":
        entries = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            key, sep, value = line.partition(":")
            if not sep or not key.strip():
                raise HeaderError(f"{path}: line {lineno} is not 'key: value'")
            entries[key.strip()] = value.strip()
        for key in _RESERVED:
            if key not in entries:
                raise HeaderError(f"{path}: missing '{key}'")
        try:
            dims = tuple(int(d) for d in entries["dims"].split(","))
        except ValueError:
            raise HeaderError(f"{path}: bad dims {entries['dims']!r}") from None
        if len(dims) != 4 or any(d <= 0 for d in dims):
            raise HeaderError(f"{path}: dims must be 4 positive integers, got {dims}")
        if entries["dtype"] != DTYPE_TAG:
            raise HeaderError(f"{path}: unsupported dtype {entries['dtype']!r}")
        if entries["order"] != ORDER:
            raise HeaderError(f"{path}: unsupported order {entries['order']!r}")
        meta = {k: v for k, v in entries.items() if k not in _RESERVED}
        return cls(dims=dims, meta=meta)


def as_tensor4(t, name="tensor") -> np.ndarray:
    """Validate ``t`` as a finite complex 4D array and return it."""
    arr = np.asarray(t)
    if arr.ndim != 4:
        raise ValueError(f"{name} must be 4D [coil,time,row,col], got shape {arr.shape}")
    if any(d <= 0 for d in arr.shape):
        raise ValueError(f"{name} has an empty dimension: {arr.shape}")
    if not np.iscomplexobj(arr):
        arr = arr.astype(np.complex128)
    return arr


def _stem(path) -> Path:
    p = Path(path)
    if p.suffix in (".hdr", ".cplx"):
        p = p.with_suffix("")
    return p


def _with_ext(stem: Path, ext: str) -> Path:
    # append rather than replace, so stems like "ops.gx" stay distinct
    return stem.with_name(stem.name + ext)


def _atomic_write(target: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_cplx(t, path, meta: dict | None = None) -> None:
    """Write ``<path>.hdr`` and ``<path>.cplx``.

    The payload is little-endian interleaved float32 (real, imag) in
    row-major order.  Both files go through a temp file and ``os.replace``.
    """
    arr = as_tensor4(t)
    if not np.all(np.isfinite(arr)):
        raise ValueError("refusing to save a tensor with non-finite samples")
    meta = dict(meta or {})
    for key, value in meta.items():
        if key in _RESERVED or ":" in str(key) or "\n" in f"{key}{value}":
            raise ValueError(f"invalid metadata entry {key!r}")
    stem = _stem(path)
    header = TensorHeader(dims=tuple(arr.shape), meta=meta)
    payload = np.ascontiguousarray(arr, dtype="<c8").tobytes()
    try:
        _atomic_write(_with_ext(stem, ".cplx"), payload)
        _atomic_write(_with_ext(stem, ".hdr"), header.to_text().encode())
    except OSError as exc:
        raise TensorFileError(f"cannot write tensor to {stem}: {exc}") from exc


def load_header(path) -> TensorHeader:
    hdr = _with_ext(_stem(path), ".hdr")
    if not hdr.exists():
        raise MissingFileError(f"missing header file {hdr}")
    return TensorHeader.from_text(hdr.read_text(), hdr)


def load_cplx(path) -> np.ndarray:
    """Read a tensor written by :func:`save_cplx` (complex64 array)."""
    header = load_header(path)
    raw = _with_ext(_stem(path), ".cplx")
    if not raw.exists():
        raise MissingFileError(f"missing payload file {raw}")
    size = raw.stat().st_size
    if size != header.payload_bytes:
        raise SizeMismatchError(
            f"{raw}: payload has {size} bytes, header dims {header.dims} need {header.payload_bytes}"
        )
    data = np.fromfile(raw, dtype="<c8").astype(np.complex64)
    return data.reshape(header.dims)


@functools.lru_cache(maxsize=16)
def _checkerboards(n_row: int, n_col: int):
    """``(pre, post)`` modulations that make a plain FFT centred on even grids.

    For even N, shifting the origin by N/2 multiplies the spectrum by
    (-1)^k, so fftshift(fft(ifftshift(x))) = (-1)^(N/2) (-1)^k fft((-1)^n x).
    """
    board = np.where((np.add.outer(np.arange(n_row), np.arange(n_col)) % 2) == 0, 1.0 + 0j, -1.0 + 0j)
    sign = -1.0 if (n_row // 2 + n_col // 2) % 2 else 1.0
    return board, sign * board


def _centred(x, fn):
    x = np.asarray(x)
    axes = (-2, -1)
    n_row, n_col = x.shape[-2:]
    if n_row % 2 or n_col % 2:
        out = fn(scipy.fft.ifftshift(x, axes=axes), axes=axes, norm="ortho", workers=_workers)
        return scipy.fft.fftshift(out, axes=axes)
    pre, post = _checkerboards(n_row, n_col)
    out = fn(x * pre, axes=axes, norm="ortho", workers=_workers, overwrite_x=True)
    out *= post
    return out


def fft2c(t) -> np.ndarray:
    """Centered orthonormal 2D DFT over (row, col) of every coil/frame."""
    return _centred(t, scipy.fft.fft2)


def ifft2c(t) -> np.ndarray:
    """Inverse (and adjoint) of :func:`fft2c`."""
    return _centred(t, scipy.fft.ifft2)


def fftc(x, axis: int) -> np.ndarray:
    """Uncentered orthonormal 1D DFT along ``axis`` (used along time)."""
    return scipy.fft.fft(x, axis=axis, norm="ortho", workers=_workers)


def ifftc(x, axis: int) -> np.ndarray:
    return scipy.fft.ifft(x, axis=axis, norm="ortho", workers=_workers)


def vdot(a, b) -> complex:
    """``<a, b> = sum(conj(a) * b)`` over all entries."""
    return np.vdot(np.asarray(a).ravel(), np.asarray(b).ravel())
