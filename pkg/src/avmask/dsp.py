"""Signal transforms: resampling, STFT/ISTFT, compression and normalization.

All functions are pure; the container types are frozen dataclasses whose
arrays are marked read-only on construction.
"""

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import signal as sps

SAMPLE_RATE = 16000
STD_FLOOR = 1e-8


def _readonly(a, dtype=None):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = _readonly(self.samples, np.float64)
        if samples.ndim != 1:
            raise ValueError(f"waveform must be 1-D, got shape {samples.shape}")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class StftConfig:
    """Analysis settings; defaults are 25 ms / 10 ms at 16 kHz with a 512-point FFT."""

    fft_size: int = 512
    win_length: int = 400
    hop_length: int = 160
    window: str = "hann"
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if not 0 < self.hop_length <= self.win_length <= self.fft_size:
            raise ValueError(
                "need 0 < hop_length <= win_length <= fft_size, got "
                f"{self.hop_length}/{self.win_length}/{self.fft_size}"
            )
        if self.window != "hann":
            raise ValueError(f"unsupported window {self.window!r}")

    @property
    def n_bins(self):
        return self.fft_size // 2 + 1

    @property
    def pad(self):
        return self.win_length // 2

    def analysis_window(self):
        # periodic Hann
        return sps.get_window("hann", self.win_length, fftbins=True)

    def n_frames(self, n_samples):
        return 1 + (n_samples + 2 * self.pad - self.win_length) // self.hop_length


@dataclass(frozen=True)
class ComplexSpectrogram:
    frames: np.ndarray  # (T, d) complex
    config: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        frames = _readonly(self.frames, np.complex128)
        if frames.ndim != 2 or frames.shape[1] != self.config.n_bins:
            raise ValueError(
                f"expected (T, {self.config.n_bins}) frames, got {frames.shape}"
            )
        if not np.all(np.isfinite(frames)):
            raise ValueError("spectrogram contains non-finite values")
        object.__setattr__(self, "frames", frames)

    @property
    def shape(self):
        return self.frames.shape

    def magnitude(self):
        return MagSpectrogram(np.abs(self.frames))


@dataclass(frozen=True)
class MagSpectrogram:
    frames: np.ndarray  # (T, d) real
    compressed: bool = False
    normalized: bool = False

    def __post_init__(self):
        frames = _readonly(self.frames, np.float64)
        if frames.ndim != 2:
            raise ValueError(f"spectrogram must be 2-D, got shape {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise ValueError("spectrogram contains non-finite values")
        object.__setattr__(self, "frames", frames)

    @property
    def shape(self):
        return self.frames.shape


@dataclass(frozen=True)
class SpeakerStats:
    mean: np.ndarray
    std: np.ndarray
    n_frames: int

    def __post_init__(self):
        object.__setattr__(self, "mean", _readonly(self.mean, np.float64))
        object.__setattr__(self, "std", _readonly(self.std, np.float64))
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise ValueError("mean and std must be matching 1-D vectors")
        if np.any(self.std < 0):
            raise ValueError("std must be nonnegative")
        if self.n_frames < 1:
            raise ValueError("n_frames must be >= 1")

    def to_dict(self):
        return {
            "mean": [float(x) for x in self.mean],
            "std": [float(x) for x in self.std],
            "n_frames": int(self.n_frames),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"]), np.asarray(d["std"]), int(d["n_frames"]))


def resample(w, target_rate):
    """Band-limited polyphase resampling with a Kaiser-windowed sinc (beta 8.6).

    The lowpass prototype has 64 taps per polyphase branch.
    """
    if len(w) == 0:
        raise ValueError("empty waveform")
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == w.sample_rate:
        return w
    ratio = Fraction(int(target_rate), w.sample_rate)
    up, down = ratio.numerator, ratio.denominator
    n_taps = 64 * up
    if n_taps % 2 == 0:
        n_taps += 1
    # resample_poly applies the gain of `up` itself
    taps = sps.firwin(n_taps, 1.0 / max(up, down), window=("kaiser", 8.6))
    out = sps.resample_poly(w.samples, up, down, window=taps, padtype="line")
    return Waveform(out, int(target_rate))


def stft(w, cfg=StftConfig()):
    """Short-time Fourier transform with reflection padding of win_length/2."""
    x = w.samples
    if len(x) < cfg.win_length:
        raise ValueError(
            f"signal of {len(x)} samples is shorter than one window ({cfg.win_length})"
        )
    padded = np.pad(x, cfg.pad, mode="reflect")
    n_frames = cfg.n_frames(len(x))
    idx = np.arange(cfg.win_length)[None, :] + cfg.hop_length * np.arange(n_frames)[:, None]
    frames = padded[idx] * cfg.analysis_window()
    return ComplexSpectrogram(np.fft.rfft(frames, n=cfg.fft_size, axis=1), cfg)


def istft(spec, cfg=None, length=None):
    """Weighted overlap-add inverse normalized by the summed squared window.

    ``length`` trims or zero-pads the output; by default it is
    ``(T - 1) * hop_length`` samples.
    """
    cfg = cfg or spec.config
    n_frames = spec.shape[0]
    if n_frames == 0:
        raise ValueError("cannot invert a spectrogram with zero frames")
    if spec.shape[1] != cfg.n_bins:
        raise ValueError(f"expected {cfg.n_bins} bins, got {spec.shape[1]}")
    win = cfg.analysis_window()
    frames = np.fft.irfft(spec.frames, n=cfg.fft_size, axis=1)[:, : cfg.win_length] * win
    total = (n_frames - 1) * cfg.hop_length + cfg.win_length
    out = np.zeros(total)
    norm = np.zeros(total)
    sq = win**2
    for t in range(n_frames):
        start = t * cfg.hop_length
        out[start : start + cfg.win_length] += frames[t]
        norm[start : start + cfg.win_length] += sq
    nz = norm > 1e-10
    out[nz] /= norm[nz]
    out = out[cfg.pad :]
    if length is None:
        length = (n_frames - 1) * cfg.hop_length
    out = out[:length]
    if len(out) < length:
        out = np.pad(out, (0, length - len(out)))
    return Waveform(out, cfg.sample_rate)


def _check_exponent(p):
    if not 0 < p <= 1:
        raise ValueError(f"exponent must be in (0, 1], got {p}")


def power_compress(m, p=0.3):
    _check_exponent(p)
    if np.any(m.frames < 0):
        raise ValueError("power compression requires nonnegative magnitudes")
    return MagSpectrogram(m.frames**p, compressed=True, normalized=m.normalized)


def power_expand(m, p=0.3):
    _check_exponent(p)
    if np.any(m.frames < 0):
        raise ValueError("power expansion requires nonnegative magnitudes")
    return MagSpectrogram(m.frames ** (1.0 / p), compressed=False, normalized=m.normalized)


def compute_speaker_stats(specs):
    """Per-bin mean and population std pooled over every frame of ``specs``."""
    specs = list(specs)
    if not specs:
        raise ValueError("need at least one spectrogram to compute statistics")
    d = specs[0].shape[1]
    for s in specs:
        if s.shape[1] != d:
            raise ValueError(f"inconsistent bin counts: {d} vs {s.shape[1]}")
    stacked = np.concatenate([s.frames for s in specs], axis=0)
    return SpeakerStats(stacked.mean(axis=0), stacked.std(axis=0), stacked.shape[0])


def _check_dims(m, st):
    if m.shape[1] != st.mean.shape[0]:
        raise ValueError(
            f"dimension mismatch: spectrogram has {m.shape[1]} bins, stats have {st.mean.shape[0]}"
        )


def normalize(m, st):
    """Z-score each frequency bin with std floored at 1e-8."""
    if not m.compressed:
        raise ValueError("normalize expects a compressed spectrogram")
    _check_dims(m, st)
    z = (m.frames - st.mean) / np.maximum(st.std, STD_FLOOR)
    return MagSpectrogram(z, compressed=True, normalized=True)


def denormalize(m, st):
    _check_dims(m, st)
    x = m.frames * np.maximum(st.std, STD_FLOOR) + st.mean
    return MagSpectrogram(x, compressed=m.compressed, normalized=False)


def reconstruct_with_noisy_phase(est_mag, noisy, cfg=None, length=None):
    """Combine a linear magnitude estimate with the mixture phase and invert."""
    cfg = cfg or noisy.config
    if est_mag.compressed or est_mag.normalized:
        raise ValueError(
            "estimate must be a linear magnitude (expand and denormalize first)"
        )
    if est_mag.shape != noisy.shape:
        raise ValueError(f"dimension mismatch: {est_mag.shape} vs {noisy.shape}")
    phase = np.exp(1j * np.angle(noisy.frames))
    return istft(ComplexSpectrogram(est_mag.frames * phase, cfg), cfg, length=length)


def compressed_magnitude(w, cfg=StftConfig(), p=0.3):
    """Convenience: STFT followed by |x|^p; returns (complex spec, compressed mag)."""
    spec = stft(w, cfg)
    return spec, power_compress(spec.magnitude(), p)
