"""Implementations of the ``prepare | oracle | train | enhance | evaluate`` commands."""

import io
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from avmask import landmarks, pipeline, plotting
from avmask.mixing import (
    ManifestEntry,
    build_manifest_grid_style,
    build_manifest_timit_style,
    read_manifest,
    render_mixture,
    split_speakers,
)
from avmask.nn.checkpoint import load_checkpoint, save_checkpoint
from avmask.nn.graph import REFINE_KINDS, VL2M, ModelGraph
from avmask.train import fit, fit_two_stage
from avmask.wavio import write_wav

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


@dataclass
class Outcome:
    """What a command produced; ``failures`` lists per-entry problems."""

    outputs: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    @property
    def exit_code(self):
        return 2 if self.failures else 0


def work_path(cfg, *parts):
    return os.path.join(cfg.data.work_dir, *parts)


def manifest_path(cfg, name):
    return work_path(cfg, "manifests", f"{name}.jsonl")


def stats_path(cfg, speaker):
    return work_path(cfg, "stats", f"{speaker}.json")


def load_speaker_cache(cfg, speaker):
    path = stats_path(cfg, speaker)
    if not os.path.exists(path):
        raise FileNotFoundError(f"no statistics cache for speaker {speaker!r} ({path}); run prepare")
    with open(path, encoding="utf-8") as fh:
        return pipeline.SpeakerCache.from_json(fh.read())


def _wav_bytes(wav):
    buf = io.BytesIO()
    write_wav(buf, wav)
    return buf.getvalue()


# -- prepare ------------------------------------------------------------------


def _split_manifest(cfg, sub, seed, n_interferers):
    d = cfg.data
    if len(sub) < 1 + n_interferers:
        return [], 0
    if d.style == "grid":
        specs = build_manifest_grid_style(sub, d.n_utt_per_spk, d.mixes_per_utt, seed,
                                          n_interferers, d.gain_policy)
        return specs, 0
    return build_manifest_timit_style(sub, d.max_dur_gap, d.mixes_per_utt, seed,
                                      d.n_utt_per_spk, n_interferers, d.gain_policy)


def cmd_prepare(cfg, jobs=1):
    """Split speakers, build and render mixture manifests, cache speaker statistics."""
    cfg.validate(need_corpus=True)
    corpus, missing = pipeline.scan_corpus(cfg.data.corpus_dir, cfg.data.exclude_speakers)
    out = Outcome(failures=[f"missing landmarks: {p}" for p in missing])
    plan = split_speakers(list(corpus), cfg.data.split, cfg.seed)
    seeds = np.random.SeedSequence(cfg.seed).spawn(4)
    groups = {}
    skipped = 0
    for k, name in enumerate(SPLITS):
        sub = {s: corpus[s] for s in getattr(plan, name)}
        split_seed = int(seeds[k].generate_state(1)[0])
        groups[name], n_skip = _split_manifest(cfg, sub, split_seed, 1)
        skipped += n_skip
        if not groups[name] and sub:
            log.warning("split %s: too few speakers to build mixtures", name)
    if cfg.data.three_speaker_test:
        sub = {s: corpus[s] for s in plan.test}
        groups["test3"], n_skip = _split_manifest(
            cfg, sub, int(seeds[3].generate_state(1)[0]), 2
        )
        skipped += n_skip
    if not any(groups.values()):
        raise ValueError("no mixtures could be built from the corpus")

    def render(spec):
        mixture, reference, rescale, gains = render_mixture(
            spec, pipeline.load_audio, cfg.data.snr_db
        )
        eid = spec.entry_id
        mpath = work_path(cfg, "audio", "mixtures", eid + ".wav")
        rpath = work_path(cfg, "audio", "references", eid + ".wav")
        pipeline.write_if_changed(mpath, _wav_bytes(mixture))
        pipeline.write_if_changed(rpath, _wav_bytes(reference))
        return ManifestEntry(spec, mpath, rpath, rescale, gains)

    entries = {}
    for name, specs in groups.items():
        entries[name] = pipeline.parallel_map(render, specs, jobs)
        text = "".join(json.dumps(e.to_record()) + "\n" for e in entries[name])
        pipeline.write_if_changed(manifest_path(cfg, name), text)
        out.outputs[name] = len(entries[name])

    mixtures_by_spk = {}
    for name in SPLITS:
        for e in entries.get(name, []):
            mixtures_by_spk.setdefault(e.spec.target.speaker_id, []).append(e.mixture_path)

    def stats(spk):
        cache = pipeline.speaker_stats(cfg, corpus[spk], mixtures_by_spk.get(spk, []))
        pipeline.write_if_changed(stats_path(cfg, spk), cache.to_json())

    pipeline.parallel_map(stats, sorted(corpus), jobs)
    pipeline.write_if_changed(work_path(cfg, "split.json"),
                              json.dumps(plan.to_dict(), indent=2) + "\n")
    pipeline.write_if_changed(work_path(cfg, "config.json"), cfg.canonical_json())
    out.outputs["skipped_no_partner"] = skipped
    return out


# -- oracle -------------------------------------------------------------------


def _condition(n):
    return f"{n}spk"


def summarize(rows, keys):
    """Mean of each key per condition (``n_speakers``), in sorted condition order."""
    table = {}
    for n in sorted({r["n_speakers"] for r in rows}):
        sel = [r for r in rows if r["n_speakers"] == n]
        table[_condition(n)] = {k: float(np.mean([r[k] for r in sel])) for k in keys}
        table[_condition(n)]["count"] = len(sel)
    return table


def format_table(title, summary, keys):
    widths = [max(10, len(k)) for k in keys]
    header = f"{'condition':<10} {'count':>5} " + " ".join(f"{k:>{w}}" for k, w in zip(keys, widths))
    lines = [title, header, "-" * len(header)]
    for cond, vals in summary.items():
        lines.append(f"{cond:<10} {vals['count']:>5} "
                     + " ".join(f"{vals[k]:>{w}.2f}" for k, w in zip(keys, widths)))
    return "\n".join(lines) + "\n"


def cmd_oracle(cfg, manifest, out_dir=None, jobs=1):
    """Noisy vs TBM-oracle vs IAM-oracle SDR for each manifest entry."""
    cfg.validate()
    entries = read_manifest(manifest)
    if not entries:
        raise ValueError(f"manifest {manifest} is empty")
    out = Outcome()

    def one(entry):
        try:
            cache = load_speaker_cache(cfg, entry.spec.target.speaker_id)
            return pipeline.oracle_scores(cfg, entry, cache)
        except (OSError, ValueError) as exc:
            return {"entry_id": entry.spec.entry_id, "error": str(exc)}

    rows = pipeline.parallel_map(one, entries, jobs)
    good = [r for r in rows if "error" not in r]
    out.failures = [f"{r['entry_id']}: {r['error']}" for r in rows if "error" in r]
    for f in out.failures:
        log.error(f)
    keys = ("noisy", "tbm", "iam")
    summary = summarize(good, keys) if good else {}
    out.outputs = {"rows": good, "summary": summary}
    out_dir = out_dir or work_path(cfg, "oracle")
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "oracle.jsonl"), "w", encoding="utf-8") as fh:
        for r in good:
            fh.write(json.dumps(r) + "\n")
    with open(os.path.join(out_dir, "oracle.txt"), "w", encoding="utf-8") as fh:
        fh.write(format_table(f"oracle SDR ({cfg.sdr_variant}, dB)", summary, keys))
    if summary:
        plotting.sdr_summary_figure(summary, keys, os.path.join(out_dir, "oracle.png"),
                                    title="Oracle masks")
    return out


# -- train --------------------------------------------------------------------


def load_sequences(cfg, manifest, jobs=1):
    entries = read_manifest(manifest)
    caches = {}

    def one(entry):
        spk = entry.spec.target.speaker_id
        if spk not in caches:
            caches[spk] = load_speaker_cache(cfg, spk)
        return pipeline.entry_sequence(cfg, entry, caches[spk])

    return entries, pipeline.parallel_map(one, entries, jobs)


def model_path(cfg, kind):
    return work_path(cfg, "models", f"{kind}.ckpt")


def cmd_train(cfg, kind=None, vl2m_checkpoint=None, max_epochs=None, jobs=1):
    """Train one architecture on the prepared train/val manifests."""
    cfg.validate()
    kind = kind or cfg.model.kind
    _, train_set = load_sequences(cfg, manifest_path(cfg, "train"), jobs)
    val_file = manifest_path(cfg, "val")
    val_set = load_sequences(cfg, val_file, jobs)[1] if os.path.exists(val_file) else []
    if not train_set:
        raise ValueError("training manifest is empty")
    if not val_set:
        log.warning("no validation mixtures; early stopping monitors the training set")
        val_set = train_set
    n_freq = cfg.stft.n_bins
    model = ModelGraph.build(kind, cfg.model.dims(n_freq), seed=cfg.seed)
    tcfg = cfg.train.train_config(cfg.seed, max_epochs)
    os.makedirs(work_path(cfg, "models"), exist_ok=True)
    history = work_path(cfg, "models", f"{kind}.history.jsonl")
    if kind in REFINE_KINDS:
        vpath = vl2m_checkpoint or model_path(cfg, VL2M)
        if not os.path.exists(vpath):
            raise FileNotFoundError(f"{kind} needs a trained VL2M checkpoint ({vpath})")
        vl2m = load_checkpoint(vpath)
        pre = cfg.train.train_config(cfg.seed, cfg.train.pretrain_epochs or max_epochs)
        result = fit_two_stage(model, vl2m, train_set, val_set, pre, tcfg,
                               skip_pretrain=cfg.train.skip_pretrain, history_path=history)
    else:
        result = fit(model, train_set, val_set, tcfg, history_path=history)
    path = model_path(cfg, kind)
    save_checkpoint(path, result.checkpoint)
    return Outcome({"checkpoint": path, "best_epoch": result.best_epoch,
                    "history": history, "diverged": result.diverged},
                   ["training diverged"] if result.diverged else [])


# -- enhance ------------------------------------------------------------------


def emit_pngs(enh, out_dir, stem):
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "mixture": os.path.join(out_dir, f"{stem}_mixture.png"),
        "mask": os.path.join(out_dir, f"{stem}_mask.png"),
        "enhanced": os.path.join(out_dir, f"{stem}_enhanced.png"),
        "overview": os.path.join(out_dir, f"{stem}_overview.png"),
    }
    plotting.spectrogram_png(enh.noisy_mag.frames, paths["mixture"])
    plotting.spectrogram_png(enh.mask, paths["mask"])
    plotting.spectrogram_png(enh.enhanced_mag.frames, paths["enhanced"])
    plotting.enhancement_overview(enh.noisy_mag.frames, enh.mask, enh.enhanced_mag.frames,
                                  paths["overview"], title=stem)
    return paths


def cmd_enhance(cfg, checkpoint, mixture, landmark_csv, out_wav, speaker=None, png_dir=None):
    """Enhance one mixture given the target speaker's landmark track."""
    cfg.validate()
    model = load_checkpoint(checkpoint).model
    cache = load_speaker_cache(cfg, speaker) if speaker else None
    wav = pipeline.load_audio(mixture, cfg.sample_rate)
    track = landmarks.parse_landmarks(landmark_csv)
    enh = pipeline.enhance(cfg, model, wav, track, cache)
    pipeline.write_if_changed(out_wav, _wav_bytes(enh.waveform))
    outputs = {"wav": out_wav}
    if png_dir:
        stem = os.path.splitext(os.path.basename(out_wav))[0]
        outputs["png"] = emit_pngs(enh, png_dir, stem)
    return Outcome(outputs)


def cmd_enhance_manifest(cfg, checkpoint, manifest, out_dir, png_dir=None, jobs=1):
    """Enhance every entry of a manifest into ``out_dir/<entry_id>.wav``."""
    cfg.validate()
    model = load_checkpoint(checkpoint).model
    entries = read_manifest(manifest)
    out = Outcome()
    os.makedirs(out_dir, exist_ok=True)

    def one(entry):
        eid = entry.spec.entry_id
        try:
            cache = load_speaker_cache(cfg, entry.spec.target.speaker_id)
            wav = pipeline.load_audio(entry.mixture_path, cfg.sample_rate)
            track = landmarks.parse_landmarks(entry.spec.target.landmark_path)
            enh = pipeline.enhance(cfg, model, wav, track, cache)
            pipeline.write_if_changed(os.path.join(out_dir, eid + ".wav"), _wav_bytes(enh.waveform))
            if png_dir:
                emit_pngs(enh, png_dir, eid)
            return None
        except (OSError, ValueError) as exc:
            return f"{eid}: {exc}"

    out.failures = [f for f in pipeline.parallel_map(one, entries, jobs) if f]
    out.outputs = {"enhanced": len(entries) - len(out.failures), "dir": out_dir}
    return out


# -- evaluate -----------------------------------------------------------------


def cmd_evaluate(cfg, manifests, enhanced_dir, out_dir=None, jobs=1):
    """SDR of enhanced files vs. the unprocessed mixture, grouped by condition."""
    cfg.validate()
    entries = [e for m in manifests for e in read_manifest(m)]
    if not entries:
        raise ValueError("nothing to evaluate: manifest is empty")
    out = Outcome()

    def one(entry):
        eid = entry.spec.entry_id
        path = os.path.join(enhanced_dir, eid + ".wav")
        if not os.path.exists(path):
            return {"entry_id": eid, "error": f"missing enhanced file {path}"}
        reference = pipeline.load_audio(entry.reference_path)
        enhanced = pipeline.load_audio(path)
        mixture = pipeline.load_audio(entry.mixture_path)
        return {
            "entry_id": eid,
            "n_speakers": entry.spec.n_speakers,
            "variant": cfg.sdr_variant,
            "sdr_db": pipeline.score(cfg, enhanced, reference),
            "baseline_sdr_db": pipeline.score(cfg, mixture, reference),
        }

    rows = pipeline.parallel_map(one, entries, jobs)
    good = [r for r in rows if "error" not in r]
    out.failures = [f"{r['entry_id']}: {r['error']}" for r in rows if "error" in r]
    for f in out.failures:
        log.error(f)
    keys = ("baseline_sdr_db", "sdr_db")
    summary = summarize(good, keys) if good else {}
    out_dir = out_dir or work_path(cfg, "eval")
    os.makedirs(out_dir, exist_ok=True)
    records = "".join(json.dumps(r) + "\n" for r in good)
    table = format_table(f"SDR ({cfg.sdr_variant}, dB); baseline = unprocessed mixture",
                         summary, keys)
    pipeline.write_if_changed(os.path.join(out_dir, "results.jsonl"), records)
    pipeline.write_if_changed(os.path.join(out_dir, "results.txt"), table)
    if summary:
        plotting.sdr_summary_figure(summary, keys, os.path.join(out_dir, "results.png"),
                                    title="Enhancement SDR")
    out.outputs = {"rows": good, "summary": summary, "table": table}
    return out

