"""Synthetic audio-visual corpus for desk-scale experiments.

Each synthetic speaker is a harmonic source with its own pitch range and
formant envelope, voiced in syllable-like bursts. The paired 68-point
landmark track opens the mouth in proportion to the syllable envelope, so
the motion features carry the target's voicing activity.
"""

import os
from dataclasses import dataclass

import numpy as np

from avmask.dsp import SAMPLE_RATE, Waveform
from avmask.landmarks import LandmarkTrack, write_landmarks
from avmask.wavio import write_wav

VIDEO_FPS = 25.0
TARGET_RMS = 0.1

_LOWER_LIP = [55, 56, 57, 58, 59, 65, 66, 67]
_UPPER_LIP = [49, 50, 51, 52, 53, 61, 62, 63]
_CHIN = [6, 7, 8, 9, 10]


@dataclass(frozen=True)
class SpeakerProfile:
    speaker_id: str
    f0: float
    formants: tuple
    bandwidths: tuple
    tilt_db_per_oct: float
    mouth_gain: float
    face_offset: tuple


def default_profiles(n_speakers=3):
    base = [
        SpeakerProfile("spk0", 105.0, (450.0, 1300.0, 2500.0), (120.0, 200.0, 300.0), -7.0, 9.0, (0.0, 0.0)),
        SpeakerProfile("spk1", 175.0, (750.0, 2100.0, 3300.0), (150.0, 250.0, 350.0), -5.0, 6.0, (12.0, -4.0)),
        SpeakerProfile("spk2", 265.0, (1000.0, 2800.0, 4500.0), (180.0, 300.0, 400.0), -3.0, 4.0, (-9.0, 6.0)),
        SpeakerProfile("spk3", 140.0, (600.0, 1700.0, 3900.0), (130.0, 220.0, 380.0), -6.0, 7.5, (5.0, 9.0)),
        SpeakerProfile("spk4", 220.0, (850.0, 2400.0, 3600.0), (160.0, 260.0, 360.0), -4.0, 5.0, (-4.0, -8.0)),
    ]
    if n_speakers <= len(base):
        return base[:n_speakers]
    rng = np.random.default_rng(1234)
    extra = []
    for k in range(len(base), n_speakers):
        extra.append(
            SpeakerProfile(
                f"spk{k}",
                float(rng.uniform(95, 290)),
                tuple(float(x) for x in np.sort(rng.uniform([350, 1100, 2300], [1100, 2900, 4800]))),
                (140.0, 240.0, 360.0),
                float(rng.uniform(-8, -3)),
                float(rng.uniform(4, 9)),
                (float(rng.uniform(-10, 10)), float(rng.uniform(-10, 10))),
            )
        )
    return base + extra


def _face_template():
    """Rough frontal 68-point layout in pixel coordinates."""
    pts = np.zeros((68, 2))
    a = np.linspace(-0.95 * np.pi, -0.05 * np.pi, 17)
    pts[0:17] = np.c_[100 + 55 * np.cos(a), 95 - 70 * np.sin(a)]
    pts[17:22] = np.c_[np.linspace(60, 92, 5), 70 - np.array([0, 4, 6, 5, 2])]
    pts[22:27] = np.c_[np.linspace(108, 140, 5), 70 - np.array([2, 5, 6, 4, 0])]
    pts[27:31] = np.c_[np.full(4, 100.0), np.linspace(85, 115, 4)]
    pts[31:36] = np.c_[np.linspace(88, 112, 5), 122 + np.array([0, 2, 3, 2, 0])]
    for k, cx in ((36, 76), (42, 124)):
        t = np.linspace(0, 2 * np.pi, 7)[:-1]
        pts[k : k + 6] = np.c_[cx + 11 * np.cos(t), 84 + 4 * np.sin(t)]
    t = np.linspace(np.pi, -np.pi, 13)[:-1]
    pts[48:60] = np.c_[100 + 22 * np.cos(t), 145 - 8 * np.sin(t)]
    t = np.linspace(np.pi, -np.pi, 9)[:-1]
    pts[60:68] = np.c_[100 + 14 * np.cos(t), 145 - 3 * np.sin(t)]
    return pts


def _syllable_envelope(n, rng, sr):
    env = np.zeros(n)
    pos = int(rng.uniform(0.02, 0.12) * sr)
    while pos < n:
        length = int(rng.uniform(0.10, 0.26) * sr)
        end = min(n, pos + length)
        seg = end - pos
        if seg > 8:
            env[pos:end] = np.sin(np.pi * np.arange(seg) / seg) ** 1.5 * rng.uniform(0.6, 1.0)
        pos = end + int(rng.uniform(0.04, 0.16) * sr)
    return env


def synth_utterance(profile, duration, rng, sr=SAMPLE_RATE):
    """Return ``(Waveform, LandmarkTrack)`` for one synthetic utterance."""
    n = int(round(duration * sr))
    t = np.arange(n) / sr
    env = _syllable_envelope(n, rng, sr)
    drift = 1.0 + 0.06 * np.sin(2 * np.pi * rng.uniform(0.5, 1.5) * t + rng.uniform(0, 2 * np.pi))
    f0 = profile.f0 * drift * rng.uniform(0.95, 1.05)
    phase = 2 * np.pi * np.cumsum(f0) / sr
    x = np.zeros(n)
    n_harm = int(7600 // (profile.f0 * 1.12))
    for h in range(1, n_harm + 1):
        fh = h * profile.f0
        amp = 10 ** (profile.tilt_db_per_oct * np.log2(fh / 100.0) / 20)
        amp *= 0.15 + sum(
            np.exp(-0.5 * ((fh - fc) / bw) ** 2)
            for fc, bw in zip(profile.formants, profile.bandwidths)
        )
        x += amp * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    x *= env
    x += 1e-3 * rng.standard_normal(n) * (env > 0)
    x *= TARGET_RMS / np.sqrt(np.mean(x**2))
    wav = Waveform(x, sr)

    n_video = int(np.floor(duration * VIDEO_FPS)) + 1
    vt = np.minimum((np.arange(n_video) / VIDEO_FPS * sr).astype(int), n - 1)
    win = int(0.04 * sr)
    smooth = np.convolve(env, np.ones(win) / win, mode="same")[vt]
    face = _face_template() + np.asarray(profile.face_offset)
    frames = np.repeat(face[None], n_video, axis=0)
    opening = profile.mouth_gain * smooth
    frames[:, _LOWER_LIP, 1] += opening[:, None]
    frames[:, _UPPER_LIP, 1] -= 0.25 * opening[:, None]
    frames[:, _CHIN, 1] += 0.5 * opening[:, None]
    head = np.cumsum(rng.normal(0, 0.05, size=(n_video, 1, 2)), axis=0)
    frames += head + rng.normal(0, 0.03, size=frames.shape)
    return wav, LandmarkTrack(frames, VIDEO_FPS)


def write_fixture_corpus(root, n_speakers=3, n_utts=10, duration=(0.8, 0.8), seed=0):
    """Write ``root/<speaker>/<utt>.wav`` and ``.csv`` files; returns the root path.

    ``duration`` is a (min, max) range in seconds drawn uniformly per utterance.
    """
    rng = np.random.default_rng(seed)
    os.makedirs(root, exist_ok=True)
    for profile in default_profiles(n_speakers):
        spk_dir = os.path.join(root, profile.speaker_id)
        os.makedirs(spk_dir, exist_ok=True)
        for k in range(n_utts):
            dur = float(rng.uniform(*duration)) if duration[1] > duration[0] else duration[0]
            dur = round(dur * 100) / 100
            wav, track = synth_utterance(profile, dur, rng)
            utt = f"u{k:03d}"
            write_wav(os.path.join(spk_dir, utt + ".wav"), wav)
            write_landmarks(os.path.join(spk_dir, utt + ".csv"), track)
    return root
