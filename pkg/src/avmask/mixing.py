"""Multi-talker mixture construction, speaker splits and manifests."""

import json
import logging
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from avmask.dsp import Waveform

log = logging.getLogger(__name__)

MANIFEST_SCHEMA_VERSION = 1
PEAK_LIMIT = 0.99
GAIN_POLICIES = ("unit", "snr")


@dataclass(frozen=True)
class UtteranceRecord:
    speaker_id: str
    utterance_id: str
    audio_path: str
    landmark_path: str
    duration: float

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError(f"{self.utterance_id}: duration must be positive")


@dataclass(frozen=True)
class MixtureSpec:
    target: UtteranceRecord
    interferers: tuple
    rng_seed: int
    gain_policy: str = "unit"

    def __post_init__(self):
        object.__setattr__(self, "interferers", tuple(self.interferers))
        if not self.interferers:
            raise ValueError("a mixture needs at least one interferer")
        spk = [i.speaker_id for i in self.interferers]
        if self.target.speaker_id in spk:
            raise ValueError("interferer speaker equals target speaker")
        if len(set(spk)) != len(spk):
            raise ValueError("interferer speakers must be pairwise distinct")
        if self.gain_policy not in GAIN_POLICIES:
            raise ValueError(f"unknown gain policy {self.gain_policy!r}")

    @property
    def n_speakers(self):
        return 1 + len(self.interferers)

    @property
    def entry_id(self):
        parts = [self.target.speaker_id, self.target.utterance_id]
        for i in self.interferers:
            parts += [i.speaker_id, i.utterance_id]
        return "__".join(parts)


@dataclass(frozen=True)
class SplitPlan:
    train: tuple
    val: tuple
    test: tuple

    def __post_init__(self):
        for name in ("train", "val", "test"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        a, b, c = set(self.train), set(self.val), set(self.test)
        if a & b or a & c or b & c:
            raise ValueError("split speaker sets must be disjoint")

    def to_dict(self):
        return {"train": list(self.train), "val": list(self.val), "test": list(self.test)}


@dataclass
class ManifestEntry:
    """One rendered (or to-be-rendered) mixture, as stored in a manifest line."""

    spec: MixtureSpec
    mixture_path: str = ""
    reference_path: str = ""
    rescale: float = 1.0
    interferer_gains: list = field(default_factory=list)

    def to_record(self):
        return {
            "schema_version": MANIFEST_SCHEMA_VERSION,
            "entry_id": self.spec.entry_id,
            "n_speakers": self.spec.n_speakers,
            "target": asdict(self.spec.target),
            "interferers": [asdict(i) for i in self.spec.interferers],
            "rng_seed": self.spec.rng_seed,
            "gain_policy": self.spec.gain_policy,
            "interferer_gains": [float(g) for g in self.interferer_gains],
            "rescale": float(self.rescale),
            "mixture_path": self.mixture_path,
            "reference_path": self.reference_path,
        }

    @classmethod
    def from_record(cls, rec):
        if rec.get("schema_version") != MANIFEST_SCHEMA_VERSION:
            raise ValueError(f"unsupported manifest schema {rec.get('schema_version')}")
        spec = MixtureSpec(
            UtteranceRecord(**rec["target"]),
            tuple(UtteranceRecord(**i) for i in rec["interferers"]),
            int(rec["rng_seed"]),
            rec["gain_policy"],
        )
        return cls(
            spec,
            rec.get("mixture_path", ""),
            rec.get("reference_path", ""),
            float(rec.get("rescale", 1.0)),
            list(rec.get("interferer_gains", [])),
        )


def write_manifest(path, entries):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e in entries:
            fh.write(json.dumps(e.to_record(), sort_keys=False) + "\n")


def read_manifest(path):
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                entries.append(ManifestEntry.from_record(json.loads(line)))
            except (KeyError, TypeError, json.JSONDecodeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad manifest record ({exc})") from None
    return entries


def fit_duration(interferer, target_len):
    """Cut the tail or pad silence so the output has exactly ``target_len`` samples.

    Padding is split between start and end; an odd remainder goes to the start.
    """
    x = interferer.samples
    n = len(x)
    if n >= target_len:
        out = x[:target_len]
    else:
        diff = target_len - n
        front = (diff + 1) // 2
        out = np.concatenate([np.zeros(front), x, np.zeros(diff - front)])
    return Waveform(out, interferer.sample_rate)


def _rms(x):
    return float(np.sqrt(np.mean(np.square(x))))


def mix(target, fitted_interferers, gain_policy="unit", snr_db=0.0):
    """Sum target and interferers, then rescale if the peak exceeds 0.99.

    Returns ``(mixture, rescale, interferer_gains)``. The same ``rescale``
    must be applied to the target when it serves as an evaluation
    reference. Under ``"snr"`` each interferer is scaled to sit ``snr_db``
    below the target's RMS.
    """
    if gain_policy not in GAIN_POLICIES:
        raise ValueError(f"unknown gain policy {gain_policy!r}")
    acc = target.samples.copy()
    gains = []
    for itf in fitted_interferers:
        if len(itf) != len(target):
            raise ValueError(f"length mismatch: target {len(target)}, interferer {len(itf)}")
        if itf.sample_rate != target.sample_rate:
            raise ValueError("sample rate mismatch between target and interferer")
        g = 1.0
        if gain_policy == "snr":
            ri = _rms(itf.samples)
            g = _rms(target.samples) / ri * 10 ** (-snr_db / 20) if ri > 0 else 0.0
        gains.append(g)
        acc = acc + g * itf.samples
    peak = float(np.max(np.abs(acc))) if len(acc) else 0.0
    rescale = PEAK_LIMIT / peak if peak > PEAK_LIMIT else 1.0
    return Waveform(acc * rescale, target.sample_rate), rescale, gains


def split_speakers(speakers, counts, seed):
    """Shuffle speakers with ``seed`` and carve disjoint train/val/test sets."""
    speakers = sorted(speakers)
    n_train, n_val, n_test = counts
    if min(counts) < 0:
        raise ValueError("split counts must be nonnegative")
    if n_train + n_val + n_test > len(speakers):
        raise ValueError(
            f"insufficient speakers: need {n_train + n_val + n_test}, have {len(speakers)}"
        )
    order = np.random.default_rng(seed).permutation(len(speakers))
    shuffled = [speakers[i] for i in order]
    return SplitPlan(
        shuffled[:n_train],
        shuffled[n_train : n_train + n_val],
        shuffled[n_train + n_val : n_train + n_val + n_test],
    )


def _entry_seeds(rng, n):
    return [int(x) for x in rng.integers(0, 2**31 - 1, size=n)]


def _pick_interferers(rng, by_speaker, target_spk, n_interferers, used):
    """Uniform speaker draw, then uniform utterance draw among unused ones."""
    others = sorted(s for s in by_speaker if s != target_spk and by_speaker[s])
    if len(others) < n_interferers:
        return None
    chosen = []
    spk_pool = list(others)
    while len(chosen) < n_interferers and spk_pool:
        spk = spk_pool.pop(int(rng.integers(len(spk_pool))))
        cands = [u for u in by_speaker[spk] if u.utterance_id not in used.get(spk, ())]
        if not cands:
            continue
        chosen.append(cands[int(rng.integers(len(cands)))])
    if len(chosen) < n_interferers:
        return None
    return chosen


def build_manifest_grid_style(
    corpus, n_utt_per_spk=200, mixes_per_utt=3, seed=0, n_interferers=1, gain_policy="unit"
):
    """Fixed-count protocol: each speaker contributes ``n_utt_per_spk`` targets,
    each mixed ``mixes_per_utt`` times with distinct interferer utterances
    drawn from other speakers of ``corpus``.

    ``corpus`` maps speaker id to a list of :class:`UtteranceRecord`.
    """
    if len(corpus) < 1 + n_interferers:
        raise ValueError(f"need at least {1 + n_interferers} speakers, have {len(corpus)}")
    rng = np.random.default_rng(seed)
    specs = []
    for spk in sorted(corpus):
        utts = sorted(corpus[spk], key=lambda u: u.utterance_id)
        if len(utts) < n_utt_per_spk:
            raise ValueError(
                f"speaker {spk!r} has {len(utts)} utterances, need {n_utt_per_spk}"
            )
        picked = [utts[i] for i in sorted(rng.choice(len(utts), n_utt_per_spk, replace=False))]
        for utt in picked:
            used = {}
            for _ in range(mixes_per_utt):
                chosen = _pick_interferers(rng, corpus, spk, n_interferers, used)
                if chosen is None:
                    raise ValueError(
                        f"speaker {spk!r}: not enough distinct interferer utterances"
                    )
                for c in chosen:
                    used.setdefault(c.speaker_id, set()).add(c.utterance_id)
                specs.append((utt, chosen))
    seeds = _entry_seeds(rng, len(specs))
    return [MixtureSpec(t, tuple(i), s, gain_policy) for (t, i), s in zip(specs, seeds)]


def build_manifest_timit_style(
    corpus,
    max_dur_gap=2.0,
    mixes_per_utt=3,
    seed=0,
    n_utt_per_spk=None,
    n_interferers=1,
    gain_policy="unit",
):
    """Variable-duration protocol: a pair is eligible only when the two
    durations differ by at most ``max_dur_gap`` seconds (inclusive).

    Returns ``(specs, n_skipped)`` where ``n_skipped`` counts target
    utterances that had no eligible partner.
    """
    if len(corpus) < 1 + n_interferers:
        raise ValueError(f"need at least {1 + n_interferers} speakers, have {len(corpus)}")
    rng = np.random.default_rng(seed)
    specs = []
    skipped = 0
    for spk in sorted(corpus):
        utts = sorted(corpus[spk], key=lambda u: u.utterance_id)
        if n_utt_per_spk is not None:
            if len(utts) < n_utt_per_spk:
                raise ValueError(
                    f"speaker {spk!r} has {len(utts)} utterances, need {n_utt_per_spk}"
                )
            idx = sorted(rng.choice(len(utts), n_utt_per_spk, replace=False))
            utts = [utts[i] for i in idx]
        for utt in utts:
            eligible = {
                s: [u for u in corpus[s] if abs(u.duration - utt.duration) <= max_dur_gap]
                for s in sorted(corpus)
                if s != spk
            }
            eligible = {s: sorted(v, key=lambda u: u.utterance_id) for s, v in eligible.items() if v}
            used = {}
            made = 0
            for _ in range(mixes_per_utt):
                chosen = _pick_interferers(rng, eligible, spk, n_interferers, used)
                if chosen is None:
                    break
                for c in chosen:
                    used.setdefault(c.speaker_id, set()).add(c.utterance_id)
                specs.append((utt, chosen))
                made += 1
            if made == 0:
                skipped += 1
    if not specs:
        raise ValueError("no utterance has an eligible interferer within the duration gap")
    if skipped:
        log.warning("%d utterances skipped: no partner within %.2f s", skipped, max_dur_gap)
    seeds = _entry_seeds(rng, len(specs))
    return [MixtureSpec(t, tuple(i), s, gain_policy) for (t, i), s in zip(specs, seeds)], skipped


def render_mixture(spec, load, snr_db=0.0):
    """Materialize ``spec`` given a ``load(path) -> Waveform`` callable.

    Returns ``(mixture, scaled_reference, rescale, gains)``.
    """
    target = load(spec.target.audio_path)
    fitted = [fit_duration(load(i.audio_path), len(target)) for i in spec.interferers]
    mixture, rescale, gains = mix(target, fitted, spec.gain_policy, snr_db)
    reference = Waveform(target.samples * rescale, target.sample_rate)
    return mixture, reference, rescale, gains


def validate_entry(entry, max_dur_gap=None):
    """Raise if a manifest entry violates the mixture protocol invariants."""
    spec = entry.spec
    spks = [i.speaker_id for i in spec.interferers]
    if spec.target.speaker_id in spks or len(set(spks)) != len(spks):
        raise ValueError(f"{spec.entry_id}: speaker constraint violated")
    for rec in (spec.target, *spec.interferers):
        for p in (rec.audio_path, rec.landmark_path):
            if not os.path.exists(p):
                raise ValueError(f"{spec.entry_id}: missing file {p}")
    if max_dur_gap is not None:
        for i in spec.interferers:
            if abs(i.duration - spec.target.duration) > max_dur_gap:
                raise ValueError(f"{spec.entry_id}: duration gap exceeds {max_dur_gap}")
