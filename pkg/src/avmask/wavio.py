"""RIFF PCM WAV reading and writing (16-bit, mono)."""

import wave

import numpy as np

from avmask.dsp import Waveform

_SCALE = 32768.0


def read_wav(path):
    """Read a 16-bit mono PCM WAV file into a :class:`Waveform`.

    Samples are mapped to [-1, 1) by division by 32768. Multi-channel
    files are rejected rather than downmixed.
    """
    with wave.open(path if hasattr(path, "read") else str(path), "rb") as w:
        channels = w.getnchannels()
        width = w.getsampwidth()
        rate = w.getframerate()
        raw = w.readframes(w.getnframes())
    if channels != 1:
        raise ValueError(f"{path}: expected mono audio, got {channels} channels")
    if width != 2:
        raise ValueError(f"{path}: expected 16-bit PCM, got {8 * width}-bit")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / _SCALE
    return Waveform(samples, rate)


def to_pcm16(samples):
    scaled = np.round(np.asarray(samples, dtype=np.float64) * _SCALE)
    return np.clip(scaled, -32768, 32767).astype("<i2")


def write_wav(path, wav):
    """Write ``wav`` as 16-bit mono PCM; out-of-range samples are clipped."""
    with wave.open(path if hasattr(path, "write") else str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(int(wav.sample_rate))
        w.writeframes(to_pcm16(wav.samples).tobytes())
