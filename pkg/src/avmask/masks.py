"""Oracle masks (target binary mask, ideal amplitude mask) and mask application.

Both oracles operate on power-compressed, un-normalized magnitudes. The
binary mask thresholds the target against per-bin speaker statistics; the
amplitude mask is the clipped clean/mixture ratio.
"""

import struct
from dataclasses import dataclass

import numpy as np

from avmask.dsp import MagSpectrogram, SpeakerStats, _readonly

DEFAULT_ALPHA = 0.6
DEFAULT_CLIP = 10.0
DIV_EPS = 1e-8


@dataclass(frozen=True)
class LtassThreshold:
    tau: np.ndarray
    alpha: float
    source_stats: SpeakerStats

    def __post_init__(self):
        object.__setattr__(self, "tau", _readonly(self.tau, np.float64))


@dataclass(frozen=True)
class BinaryMask:
    grid: np.ndarray

    def __post_init__(self):
        grid = _readonly(self.grid, np.float64)
        if grid.ndim != 2:
            raise ValueError(f"mask must be 2-D, got {grid.shape}")
        if not np.all((grid == 0) | (grid == 1)):
            raise ValueError("binary mask entries must be exactly 0 or 1")
        object.__setattr__(self, "grid", grid)

    @property
    def shape(self):
        return self.grid.shape


@dataclass(frozen=True)
class AmplitudeMask:
    grid: np.ndarray
    clip: float = DEFAULT_CLIP

    def __post_init__(self):
        grid = _readonly(self.grid, np.float64)
        if grid.ndim != 2:
            raise ValueError(f"mask must be 2-D, got {grid.shape}")
        if np.any(grid < 0) or np.any(grid > self.clip):
            raise ValueError(f"amplitude mask entries must lie in [0, {self.clip}]")
        object.__setattr__(self, "grid", grid)

    @property
    def shape(self):
        return self.grid.shape


def ltass_threshold(stats, alpha=DEFAULT_ALPHA):
    """Per-bin threshold ``mean + alpha * std`` of a speaker's spectra."""
    return LtassThreshold(stats.mean + alpha * stats.std, float(alpha), stats)


def _same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")


def compute_tbm(clean, thr):
    """1 where the clean target reaches the threshold (inclusive), else 0."""
    if clean.normalized:
        raise ValueError("TBM is computed on un-normalized magnitudes")
    if clean.shape[1] != thr.tau.shape[0]:
        raise ValueError(
            f"dimension mismatch: {clean.shape[1]} bins vs threshold of {thr.tau.shape[0]}"
        )
    return BinaryMask((clean.frames >= thr.tau).astype(np.float64))


def compute_iam(clean, noisy, clip=DEFAULT_CLIP):
    """Clean-over-mixture magnitude ratio clamped to ``[0, clip]``.

    Cells where the mixture is below 1e-8 get the clip value.
    """
    _same_shape(clean, noisy)
    if clip <= 0:
        raise ValueError(f"clip must be positive, got {clip}")
    if clean.normalized or noisy.normalized:
        raise ValueError("IAM is computed on un-normalized magnitudes")
    y = noisy.frames
    s = clean.frames
    small = np.abs(y) < DIV_EPS
    ratio = np.divide(s, y, out=np.full_like(s, clip), where=~small)
    return AmplitudeMask(np.clip(ratio, 0.0, clip), clip)


def apply_mask(mask, spec):
    grid = mask.grid if hasattr(mask, "grid") else np.asarray(mask)
    _same_shape(grid, spec)
    return MagSpectrogram(grid * spec.frames, spec.compressed, spec.normalized)


# Binary grid cache format: magic, version, T, d, dtype code, then row-major data.
_MAGIC = b"AVMK"
_VERSION = 1
_HEADER = struct.Struct("<4sHIIB")
_DTYPES = {0: "<u1", 1: "<f8"}


def save_mask(path, mask):
    binary = isinstance(mask, BinaryMask)
    code = 0 if binary else 1
    T, d = mask.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, T, d, code))
        if not binary:
            fh.write(struct.pack("<d", float(mask.clip)))
        fh.write(np.ascontiguousarray(mask.grid, dtype=_DTYPES[code]).tobytes())


def load_mask(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, version, T, d, code = _HEADER.unpack_from(raw, 0)
    if magic != _MAGIC:
        raise ValueError(f"{path}: not a mask file")
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported mask version {version}")
    if code not in _DTYPES:
        raise ValueError(f"{path}: unknown dtype code {code}")
    offset = _HEADER.size
    clip = None
    if code == 1:
        (clip,) = struct.unpack_from("<d", raw, offset)
        offset += 8
    dtype = np.dtype(_DTYPES[code])
    expected = T * d * dtype.itemsize
    if len(raw) - offset != expected:
        raise ValueError(f"{path}: truncated mask payload")
    grid = np.frombuffer(raw, dtype=dtype, offset=offset).reshape(T, d).astype(np.float64)
    return BinaryMask(grid) if code == 0 else AmplitudeMask(grid, clip)
