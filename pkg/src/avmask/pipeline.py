"""End-to-end glue: corpus scanning, feature extraction, enhancement and scoring."""

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from avmask import dsp, landmarks, masks, metrics
from avmask.mixing import UtteranceRecord
from avmask.nn.graph import Sequence
from avmask.wavio import read_wav

log = logging.getLogger(__name__)


def parallel_map(fn, items, jobs=1):
    """Ordered map; ``jobs > 1`` uses a thread pool but keeps input order."""
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def write_if_changed(path, data):
    """Write bytes/str only when the on-disk content differs; returns True if written."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    if os.path.exists(path):
        with open(path, "rb") as fh:
            if fh.read() == data:
                return False
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(data)
    return True


def scan_corpus(root, exclude=(), sample_rate=16000):
    """Collect ``<root>/<speaker>/<utt>.wav`` files with their landmark CSVs.

    Returns ``(corpus, missing)``: utterances whose ``.csv`` is absent are
    left out and listed in ``missing``.
    """
    if not os.path.isdir(root):
        raise ValueError(f"corpus directory {root!r} not found")
    corpus, missing = {}, []
    for spk in sorted(os.listdir(root)):
        spk_dir = os.path.join(root, spk)
        if spk in exclude or not os.path.isdir(spk_dir):
            continue
        for name in sorted(os.listdir(spk_dir)):
            if not name.endswith(".wav"):
                continue
            utt = name[:-4]
            wav_path = os.path.join(spk_dir, name)
            csv_path = os.path.join(spk_dir, utt + ".csv")
            if not os.path.exists(csv_path):
                missing.append(wav_path)
                continue
            w = read_wav(wav_path)
            duration = len(w) / w.sample_rate
            corpus.setdefault(spk, []).append(
                UtteranceRecord(spk, utt, wav_path, csv_path, duration)
            )
    if not corpus:
        raise ValueError(f"corpus directory {root!r} holds no usable utterances")
    if missing:
        log.warning("%d utterances without landmark files skipped", len(missing))
    return corpus, missing


def load_audio(path, rate=16000):
    w = read_wav(path)
    return dsp.resample(w, rate) if w.sample_rate != rate else w


@dataclass
class SpeakerCache:
    """Per-speaker statistics: clean spectra (TBM threshold), mixtures (input
    normalization) and motion features."""

    clean: dsp.SpeakerStats
    mixture: dsp.SpeakerStats
    features: landmarks.FeatureStats

    def to_json(self):
        return json.dumps(
            {"clean": self.clean.to_dict(), "mixture": self.mixture.to_dict(),
             "features": self.features.to_dict()},
            sort_keys=True,
        ) + "\n"

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(dsp.SpeakerStats.from_dict(d["clean"]),
                   dsp.SpeakerStats.from_dict(d["mixture"]),
                   landmarks.FeatureStats.from_dict(d["features"]))


def compressed(w, cfg):
    return dsp.compressed_magnitude(w, cfg.stft, cfg.compress_p)


def track_features(path):
    return landmarks.motion_vectors(landmarks.upsample_track(landmarks.parse_landmarks(path)))


def speaker_stats(cfg, utterances, mixture_paths):
    """Statistics for one speaker from its clean utterances and target mixtures."""
    clean = [compressed(load_audio(u.audio_path), cfg)[1] for u in utterances]
    mixed = [compressed(load_audio(p), cfg)[1] for p in mixture_paths] or clean
    feats = [track_features(u.landmark_path) for u in utterances]
    return SpeakerCache(
        dsp.compute_speaker_stats(clean),
        dsp.compute_speaker_stats(mixed),
        landmarks.compute_feature_stats(feats),
    )


def oracle_tbm(cfg, target, stats):
    """Binary mask from the unscaled clean target; independent of interferers."""
    _, s = compressed(target, cfg)
    return masks.compute_tbm(s, masks.ltass_threshold(stats, cfg.alpha))


def entry_sequence(cfg, entry, cache):
    """Build the network input/target bundle for one manifest entry."""
    spec = entry.spec
    mixture = load_audio(entry.mixture_path)
    reference = load_audio(entry.reference_path)
    _, y_mag = compressed(mixture, cfg)
    _, s = compressed(reference, cfg)
    y = dsp.normalize(y_mag, cache.mixture)
    m = oracle_tbm(cfg, load_audio(spec.target.audio_path), cache.clean)
    track = landmarks.parse_landmarks(spec.target.landmark_path)
    v = landmarks.visual_features(track, cache.features, y_mag.shape[0])
    return Sequence(
        v=v.frames, y=y.frames, y_mag=y_mag.frames, s=s.frames, m=m.grid,
        y_mean=cache.mixture.mean, y_std=cache.mixture.std, name=spec.entry_id,
    )


def masked_waveform(cfg, noisy_spec, y_mag, mask, length):
    """Apply a mask in the compressed domain and resynthesize with the noisy phase."""
    est = masks.apply_mask(mask, y_mag)
    lin = dsp.power_expand(est, cfg.compress_p)
    return dsp.reconstruct_with_noisy_phase(lin, noisy_spec, cfg.stft, length=length)


@dataclass
class Enhancement:
    waveform: dsp.Waveform
    mask: np.ndarray
    noisy_mag: dsp.MagSpectrogram
    enhanced_mag: dsp.MagSpectrogram


def enhance(cfg, model, mixture, track, cache=None, forced_mask=None):
    """Full inference path for one mixture and the target's landmark track.

    Without a speaker cache the mixture and features are normalized with
    their own utterance statistics.
    """
    if mixture.sample_rate != cfg.sample_rate:
        mixture = dsp.resample(mixture, cfg.sample_rate)
    noisy, y_mag = compressed(mixture, cfg)
    mix_stats = cache.mixture if cache else dsp.compute_speaker_stats([y_mag])
    y = dsp.normalize(y_mag, mix_stats)
    raw = landmarks.motion_vectors(landmarks.upsample_track(track))
    feat_stats = cache.features if cache else landmarks.compute_feature_stats([raw])
    try:
        v = landmarks.align_lengths(landmarks.normalize_features(raw, feat_stats), y_mag.shape[0])
    except ValueError as exc:
        raise ValueError(f"landmark track does not match the mixture: {exc}") from None
    if forced_mask is not None:
        mask = np.broadcast_to(forced_mask, y_mag.shape)
    else:
        seq = Sequence(v=v.frames, y=y.frames, y_mag=y_mag.frames,
                       y_mean=mix_stats.mean, y_std=mix_stats.std)
        mask = model.predict(seq)
    wav = masked_waveform(cfg, noisy, y_mag, mask, len(mixture))
    enhanced = masks.apply_mask(mask, y_mag)
    return Enhancement(wav, np.asarray(mask), y_mag, enhanced)


def score(cfg, estimate, reference):
    return metrics.sdr(estimate, reference, cfg.sdr_variant, cfg.filter_taps).sdr_db


def oracle_scores(cfg, entry, cache):
    """Noisy, TBM-oracle and IAM-oracle SDR for one manifest entry."""
    mixture = load_audio(entry.mixture_path)
    reference = load_audio(entry.reference_path)
    noisy, y_mag = compressed(mixture, cfg)
    _, s = compressed(reference, cfg)
    tbm = oracle_tbm(cfg, load_audio(entry.spec.target.audio_path), cache.clean)
    iam = masks.compute_iam(s, y_mag, cfg.clip)
    n = len(mixture)
    return {
        "entry_id": entry.spec.entry_id,
        "n_speakers": entry.spec.n_speakers,
        "noisy": score(cfg, mixture, reference),
        "tbm": score(cfg, masked_waveform(cfg, noisy, y_mag, tbm, n), reference),
        "iam": score(cfg, masked_waveform(cfg, noisy, y_mag, iam, n), reference),
    }


def enhance_sequence(cfg, model, entry, seq):
    mixture = load_audio(entry.mixture_path)
    noisy = dsp.stft(mixture, cfg.stft)
    y_mag = dsp.MagSpectrogram(seq.y_mag, compressed=True)
    mask = model.predict(seq)
    return masked_waveform(cfg, noisy, y_mag, mask, len(mixture))
