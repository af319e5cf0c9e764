"""Face-landmark tracks: CSV ingestion, temporal upsampling and motion features."""

import math
from dataclasses import dataclass

import numpy as np

from avmask.dsp import STD_FLOOR, _readonly

N_POINTS = 68
N_COORDS = 2 * N_POINTS
FEATURE_FPS = 100.0
MAX_ALIGN_GAP = 12


@dataclass(frozen=True)
class LandmarkTrack:
    frames: np.ndarray  # (N, 68, 2)
    fps: float

    def __post_init__(self):
        frames = _readonly(self.frames, np.float64)
        if frames.ndim != 3 or frames.shape[1:] != (N_POINTS, 2):
            raise ValueError(f"expected (N, {N_POINTS}, 2) landmarks, got {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise ValueError("landmark coordinates must be finite")
        if not self.fps > 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "fps", float(self.fps))

    def __len__(self):
        return self.frames.shape[0]


@dataclass(frozen=True)
class FeatureSeq:
    frames: np.ndarray  # (T, 136)
    fps: float = FEATURE_FPS

    def __post_init__(self):
        frames = _readonly(self.frames, np.float64)
        if frames.ndim != 2 or frames.shape[1] != N_COORDS:
            raise ValueError(f"expected (T, {N_COORDS}) features, got {frames.shape}")
        object.__setattr__(self, "frames", frames)

    def __len__(self):
        return self.frames.shape[0]


@dataclass(frozen=True)
class FeatureStats:
    mean: np.ndarray
    std: np.ndarray
    n_frames: int

    def __post_init__(self):
        object.__setattr__(self, "mean", _readonly(self.mean, np.float64))
        object.__setattr__(self, "std", _readonly(self.std, np.float64))
        if np.any(self.std < 0):
            raise ValueError("std must be nonnegative")

    def to_dict(self):
        return {
            "mean": [float(x) for x in self.mean],
            "std": [float(x) for x in self.std],
            "n_frames": int(self.n_frames),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"]), np.asarray(d["std"]), int(d["n_frames"]))


def parse_landmarks(path):
    """Read a landmark CSV: ``# fps=<float>`` header then 137 fields per row."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if not lines or not lines[0].startswith("# fps="):
        raise ValueError(f"{path}: missing '# fps=<float>' header")
    try:
        fps = float(lines[0][len("# fps=") :])
    except ValueError:
        raise ValueError(f"{path}: malformed fps header {lines[0]!r}") from None
    rows = []
    last_index = None
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != N_COORDS + 1:
            raise ValueError(
                f"{path}:{lineno}: expected {N_COORDS} coordinates, got {len(fields) - 1}"
            )
        try:
            index = int(fields[0])
            coords = [float(x) for x in fields[1:]]
        except ValueError:
            raise ValueError(f"{path}:{lineno}: malformed row") from None
        if last_index is not None and index <= last_index:
            raise ValueError(
                f"{path}:{lineno}: frame index {index} not increasing (previous {last_index})"
            )
        last_index = index
        rows.append(coords)
    if not rows:
        raise ValueError(f"{path}: no landmark rows")
    return LandmarkTrack(np.asarray(rows).reshape(-1, N_POINTS, 2), fps)


def write_landmarks(path, track):
    flat = track.frames.reshape(len(track), N_COORDS)
    out = [f"# fps={track.fps!r}"]
    for i, row in enumerate(flat):
        out.append(",".join([str(i)] + [repr(float(x)) for x in row]))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(out) + "\n")


def upsample_track(track, target_fps=FEATURE_FPS):
    """Linearly interpolate landmark positions onto a ``target_fps`` grid.

    Output frame ``k`` sits at ``k / target_fps`` and the grid covers
    ``[0, (N - 1) / fps]``.
    """
    n = len(track)
    if n < 2:
        raise ValueError(f"need at least 2 frames to upsample, got {n}")
    if track.fps > target_fps:
        raise ValueError(f"source fps {track.fps} exceeds target {target_fps}")
    span = (n - 1) / track.fps
    # small slack so that exact multiples are not lost to rounding
    n_out = int(math.floor(span * target_fps + 1e-9)) + 1
    src_pos = np.arange(n_out) / target_fps * track.fps
    lo = np.minimum(np.floor(src_pos).astype(int), n - 1)
    hi = np.minimum(lo + 1, n - 1)
    frac = (src_pos - lo)[:, None, None]
    frames = track.frames
    out = frames[lo] * (1.0 - frac) + frames[hi] * frac
    exact = np.isclose(src_pos, np.round(src_pos), rtol=0, atol=1e-9)
    out[exact] = frames[np.minimum(np.round(src_pos[exact]).astype(int), n - 1)]
    return LandmarkTrack(out, target_fps)


def motion_vectors(track):
    """Frame-to-frame landmark displacement, flattened; the first frame is zero."""
    flat = track.frames.reshape(len(track), N_COORDS)
    deltas = np.zeros_like(flat)
    deltas[1:] = flat[1:] - flat[:-1]
    return FeatureSeq(deltas, track.fps)


def compute_feature_stats(seqs):
    seqs = list(seqs)
    if not seqs:
        raise ValueError("need at least one feature sequence")
    stacked = np.concatenate([s.frames for s in seqs], axis=0)
    return FeatureStats(stacked.mean(axis=0), stacked.std(axis=0), stacked.shape[0])


def normalize_features(f, st):
    """Per-dimension z-score; the all-zero first frame maps to -mean/std, not zero."""
    if f.frames.shape[1] != st.mean.shape[0]:
        raise ValueError(
            f"dimension mismatch: {f.frames.shape[1]} features vs {st.mean.shape[0]} stats"
        )
    return FeatureSeq((f.frames - st.mean) / np.maximum(st.std, STD_FLOOR), f.fps)


def denormalize_features(f, st):
    if f.frames.shape[1] != st.mean.shape[0]:
        raise ValueError("dimension mismatch")
    return FeatureSeq(f.frames * np.maximum(st.std, STD_FLOOR) + st.mean, f.fps)


def align_lengths(f, spec_frames, max_gap=MAX_ALIGN_GAP):
    """Truncate or zero-pad at the end so ``f`` has exactly ``spec_frames`` frames."""
    gap = len(f) - spec_frames
    if abs(gap) > max_gap:
        raise ValueError(
            f"feature/spectrogram length gap of {gap} frames exceeds {max_gap}; "
            "inputs look desynchronized"
        )
    if gap >= 0:
        return FeatureSeq(f.frames[:spec_frames], f.fps)
    return FeatureSeq(np.pad(f.frames, ((0, -gap), (0, 0))), f.fps)


def visual_features(track, stats=None, spec_frames=None):
    """Upsample, differentiate, normalize and align a raw landmark track."""
    feats = motion_vectors(upsample_track(track, FEATURE_FPS))
    if stats is not None:
        feats = normalize_features(feats, stats)
    if spec_frames is not None:
        feats = align_lengths(feats, spec_frames)
    return feats
