"""End-to-end acceptance checks.

Every test prints one line ``ACCEPT <n> <name>: PASS|FAIL ...`` with the
measured value, its tolerance and the wall time, then asserts.
"""

import math
import os
import shutil
import time

import numpy as np
import pytest

from avmask import commands, dsp, masks, pipeline
from avmask.cli import main
from avmask.config import load_config
from avmask.dsp import Waveform
from avmask.fixtures import write_fixture_corpus
from avmask.metrics import SDR_CAP_DB, sdr_bss, si_sdr
from avmask.mixing import (
    UtteranceRecord,
    build_manifest_grid_style,
    build_manifest_timit_style,
    fit_duration,
    read_manifest,
)
from avmask.nn.graph import (
    AV_CONCAT,
    KINDS,
    VL2M,
    VL2M_REF,
    ModelGraph,
    loss_iam,
    loss_iam_grad,
    loss_tbm,
    loss_tbm_grad,
    stack_groups,
)
from avmask.train import TrainConfig, fit, fit_two_stage
from helpers import TINY, fixture_config, perturbed, tiny_sequence
from oracles import early_stop_sim, finite_difference, max_relative_error, orthogonal_noise


def report(capsys, number, name, ok, measured, tolerance, elapsed, budget):
    """Print the PASS/FAIL line; the runtime budget is part of the verdict."""
    ok = bool(ok) and elapsed < budget
    with capsys.disabled():
        print(f"\nACCEPT {number} {name}: {'PASS' if ok else 'FAIL'} "
              f"measured={measured} tolerance={tolerance} runtime={elapsed:.1f}s (< {budget}s)")
    return ok


@pytest.fixture(scope="module")
def fixture_work(tmp_path_factory):
    """3 synthetic speakers x 10 utterances, 30 two-speaker mixtures, default config."""
    t0 = time.perf_counter()
    root = tmp_path_factory.mktemp("accept")
    cfg = load_config()
    cfg.data.corpus_dir = write_fixture_corpus(str(root / "corpus"), 3, 10, (0.8, 0.8), 0)
    cfg.data.work_dir = str(root / "work")
    cfg.data.n_utt_per_spk = 10
    cfg.data.mixes_per_utt = 1
    cfg.data.split = (3, 0, 0)
    cfg.data.three_speaker_test = False
    commands.cmd_prepare(cfg)
    return cfg, time.perf_counter() - t0


# -- 1 ------------------------------------------------------------------------


def test_stft_round_trip(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    cfg = dsp.StftConfig()
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(8000, 48001))
        x = rng.uniform(-1, 1, n)
        y = dsp.istft(dsp.stft(Waveform(x, 16000), cfg), cfg, length=n).samples
        interior = slice(cfg.win_length, n - cfg.win_length)
        err = np.linalg.norm(y[interior] - x[interior]) / np.linalg.norm(x[interior])
        worst = max(worst, float(err))
    elapsed = time.perf_counter() - t0
    assert report(capsys, 1, "stft round trip", worst < 1e-6, f"{worst:.2e}", "1e-6", elapsed, 10)


# -- 2 ------------------------------------------------------------------------


def test_oracle_identities(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    n = 16000
    clean = Waveform(np.convolve(rng.standard_normal(n), np.hanning(7), "same") * 0.05, 16000)
    _, s = dsp.compressed_magnitude(clean)
    thr = masks.ltass_threshold(dsp.compute_speaker_stats([s]), 0.6)

    worst = 0.0
    tbm_bytes = set()
    for seed in range(5):
        interferer = np.random.default_rng(100 + seed).standard_normal(n) * 0.05
        _, y = dsp.compressed_magnitude(Waveform(clean.samples + interferer, 16000))
        iam = masks.compute_iam(s, y)
        unclipped = s.frames / np.where(y.frames > 0, y.frames, np.inf) <= 10
        rebuilt = masks.apply_mask(iam, y).frames
        rel = np.abs(rebuilt[unclipped] - s.frames[unclipped]) / np.maximum(s.frames[unclipped], 1e-300)
        worst = max(worst, float(rel.max()))
        # the binary mask only ever sees the clean target
        tbm_bytes.add(masks.compute_tbm(s, thr).grid.tobytes())
    elapsed = time.perf_counter() - t0
    eps = np.finfo(float).eps
    ok = worst <= eps and len(tbm_bytes) == 1
    assert report(capsys, 2, "oracle identities", ok,
                  f"iam_rel={worst:.2e},tbm_variants={len(tbm_bytes)}",
                  f"{eps:.2e} (1 ulp),1", elapsed, 5)


# -- 3 ------------------------------------------------------------------------


def _grad_error(model, seq, loss):
    batch = stack_groups([seq])[0]
    # cross-entropy on a [0, 10] head is taken on the output divided by 10
    scale = 1.0 if model.kind == VL2M else 10.0

    def value():
        out, _ = model.forward(batch)
        if loss == "bce":
            return loss_tbm(out / scale, batch["m"])
        return loss_iam(out, batch["y_mag"], batch["s"])

    out, caches = model.forward(batch)
    if loss == "bce":
        d_out = loss_tbm_grad(out / scale, batch["m"]) / scale
    else:
        d_out = loss_iam_grad(out, batch["y_mag"], batch["s"])
    analytic = model.backward(caches, d_out)
    numeric = finite_difference(model.params, value, delta=1e-4)
    return max_relative_error(analytic, numeric)


def test_gradient_verification(capsys):
    assert TINY.n_freq == 4 and TINY.units == 3
    t0 = time.perf_counter()
    errors = {}
    for kind in KINDS:
        for loss in ("bce", "mr"):
            model = perturbed(kind, seed=7)
            errors[(kind, loss)] = _grad_error(model, tiny_sequence(T=3, seed=8), loss)
    elapsed = time.perf_counter() - t0
    worst = max(errors.values())
    assert report(capsys, 3, "gradient check (4 kinds x 2 losses)", worst < 1e-4,
                  f"{worst:.2e}", "1e-4", elapsed, 60)


# -- 4 ------------------------------------------------------------------------


def test_sdr_oracle_cases(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)
    n = 8000
    s = np.convolve(rng.standard_normal(n), np.hanning(9), "same") * np.hanning(n) ** 0.25
    deviations = []
    for ratio in (1.0, 10.0, 100.0, 1000.0):
        noise = orthogonal_noise(s, float(s @ s) / ratio, rng, taps=512)
        deviations.append(abs(sdr_bss(s + noise, s).sdr_db - 10 * math.log10(ratio)))
    worst = max(deviations)

    # a pure delay of a reference whose last samples are silent is fully explained
    s_tail = s.copy()
    s_tail[-50:] = 0.0
    delayed = np.concatenate([np.zeros(50), s_tail[:-50]])
    delay_db = sdr_bss(delayed, s_tail).sdr_db

    e = s + 0.3 * rng.standard_normal(n)
    base = si_sdr(e, s).sdr_db
    scale_gap = max(abs(si_sdr(k * e, s).sdr_db - base) for k in (1e-3, 0.5, 7.0, 1e3))
    elapsed = time.perf_counter() - t0
    ok = worst < 0.01 and delay_db == SDR_CAP_DB and scale_gap < 1e-9
    assert report(capsys, 4, "sdr oracle cases", ok,
                  f"max_dev={worst:.2e}dB,delay={delay_db:.1f}dB,si_gap={scale_gap:.1e}",
                  f"0.01dB,cap={SDR_CAP_DB:.0f}dB,1e-9", elapsed, 10)


# -- 5 ------------------------------------------------------------------------


def test_fixture_oracle_enhancement(fixture_work, capsys):
    cfg, prepare_time = fixture_work
    t0 = time.perf_counter() - prepare_time  # corpus synthesis and mixing count too
    entries = read_manifest(commands.manifest_path(cfg, "train"))
    rows = []
    for entry in entries:
        cache = commands.load_speaker_cache(cfg, entry.spec.target.speaker_id)
        rows.append(pipeline.oracle_scores(cfg, entry, cache))
    noisy = np.mean([r["noisy"] for r in rows])
    tbm = np.mean([r["tbm"] for r in rows]) - noisy
    iam = np.mean([r["iam"] for r in rows]) - noisy
    elapsed = time.perf_counter() - t0
    ok = len(rows) == 30 and iam >= 8.0 and tbm >= 3.0 and iam >= tbm
    assert report(capsys, 5, "fixture oracle masks", ok,
                  f"n={len(rows)},iam_gain={iam:.2f}dB,tbm_gain={tbm:.2f}dB",
                  "iam>=8dB,tbm>=3dB,iam>=tbm", elapsed, 120)


# -- 6 ------------------------------------------------------------------------


def _mean_improvement(cfg, model, entries, seqs):
    gains = []
    for entry, seq in zip(entries, seqs):
        reference = pipeline.load_audio(entry.reference_path)
        enhanced = pipeline.enhance_sequence(cfg, model, entry, seq)
        mixture = pipeline.load_audio(entry.mixture_path)
        gains.append(pipeline.score(cfg, enhanced, reference) - pipeline.score(cfg, mixture, reference))
    return float(np.mean(gains))


@pytest.mark.slow
def test_toy_learning(fixture_work, capsys):
    cfg, _ = fixture_work
    t0 = time.perf_counter()
    entries, seqs = commands.load_sequences(cfg, commands.manifest_path(cfg, "train"))
    entries, seqs = entries[:20], seqs[:20]

    # default architecture, trained on its own training set until it overfits
    model = ModelGraph.build(AV_CONCAT, cfg.model.dims(cfg.stft.n_bins), seed=cfg.seed)
    progress = {"gain": -math.inf, "epoch": 0}

    def check(row):
        if row["epoch"] % 10:
            return False
        progress["gain"] = _mean_improvement(cfg, model, entries, seqs)
        progress["epoch"] = row["epoch"]
        return progress["gain"] >= 6.0

    fit(model, seqs, seqs, TrainConfig(max_epochs=500, patience=500, seed=cfg.seed), on_epoch=check)
    gain, epoch = progress["gain"], progress["epoch"]

    # two-stage refinement: VL2M parameters must come through stage 2 bit for bit
    dims = cfg.model.dims(cfg.stft.n_bins)
    vl2m = ModelGraph.build(VL2M, dims, seed=cfg.seed)
    vl2m_ckpt = fit(vl2m, seqs, seqs, TrainConfig(max_epochs=2, seed=cfg.seed)).checkpoint
    refine = ModelGraph.build(VL2M_REF, dims, seed=cfg.seed + 1)
    short = TrainConfig(max_epochs=2, seed=cfg.seed)
    res = fit_two_stage(refine, vl2m_ckpt, seqs, seqs, short, short)
    trained = res.checkpoint.model
    frozen = [k for k in trained.params if trained.component_of(k) == "vl2m"]
    bit_frozen = bool(frozen) and all(
        trained.params[k].tobytes() == vl2m_ckpt.model.params[k].tobytes() for k in frozen
    )
    others_moved = any(
        trained.params[k].tobytes() != ModelGraph.build(VL2M_REF, dims, seed=cfg.seed + 1).params[k].tobytes()
        for k in trained.params if k not in frozen
    )
    elapsed = time.perf_counter() - t0
    ok = gain >= 6.0 and bit_frozen and others_moved
    assert report(capsys, 6, "toy learning + two-stage freeze", ok,
                  f"gain={gain:.2f}dB@epoch{epoch},vl2m_frozen={bit_frozen}",
                  ">=6dB within 500 epochs,frozen", elapsed, 900)


# -- 7 ------------------------------------------------------------------------


class _ScriptedLoss:
    """Model stand-in whose validation losses follow a fixed list."""

    def __init__(self, vals, epoch=0):
        self.vals = list(vals)
        self.params = {"epoch": np.array([float(epoch)])}

    def loss_and_grads(self, batch):
        return 0.0, {"epoch": np.zeros(1)}

    def loss(self, seqs):
        k = int(self.params["epoch"][0])
        self.params["epoch"][0] = k + 1
        return self.vals[k] * len(seqs)

    def copy(self):
        return _ScriptedLoss(self.vals, self.params["epoch"][0])

    def is_trainable(self, name):
        return True


def test_early_stopping_contract(capsys):
    t0 = time.perf_counter()
    scripts = [
        ([5, 4, 4, 4, 4, 4, 4, 3, 2, 1], 5),
        ([1, 2, 3, 4, 5], 1),
        ([3, 2, 2.5, 1, 1, 1, 0.5, 0.5, 0.5, 0.5], 3),
        ([9, 8, 7, 6, 5, 4], 2),
    ]
    got, want = [], []
    for vals, patience in scripts:
        res = fit(_ScriptedLoss(vals), [0], [0],
                  TrainConfig(lr=0.0, patience=patience, max_epochs=len(vals)))
        got.append((len(res.history), res.best_epoch))
        want.append(early_stop_sim(vals, patience))
    elapsed = time.perf_counter() - t0
    ok = got == want and got[0] == (7, 2)
    assert report(capsys, 7, "early stopping", ok, f"{got}", f"{want}", elapsed, 5)


# -- 8 ------------------------------------------------------------------------


def _snapshot(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for name in files:
            if ".history" in name:
                continue  # per-epoch wall-clock timings
            path = os.path.join(dirpath, name)
            with open(path, "rb") as fh:
                out[os.path.relpath(path, root)] = fh.read()
    return out


def test_determinism(small_corpus, tmp_path, capsys):
    t0 = time.perf_counter()
    config = fixture_config(small_corpus, tmp_path)
    cfg = load_config(config)
    manifest = commands.manifest_path(cfg, "train")
    ckpt = commands.model_path(cfg, AV_CONCAT)
    enhanced = os.path.join(cfg.data.work_dir, "enhanced")
    runs = []
    codes = []
    for _ in range(2):
        shutil.rmtree(cfg.data.work_dir, ignore_errors=True)
        codes.append(main(["prepare", "--config", config]))
        codes.append(main(["train", "--config", config]))
        codes.append(main(["enhance", "--config", config, "--checkpoint", ckpt,
                           "--manifest", manifest, "--out-dir", enhanced]))
        codes.append(main(["evaluate", "--config", config, "--manifest", manifest,
                           "--enhanced-dir", enhanced]))
        runs.append(_snapshot(cfg.data.work_dir))
    first, second = runs
    differing = sorted(k for k in set(first) | set(second) if first.get(k) != second.get(k))
    kinds = {os.path.splitext(k)[1] for k in first}
    elapsed = time.perf_counter() - t0
    ok = not any(codes) and not differing and {".jsonl", ".ckpt", ".wav", ".txt"} <= kinds
    assert report(capsys, 8, "determinism", ok,
                  f"files={len(first)},differing={len(differing)}", "0 differing", elapsed, 120)


# -- 9 ------------------------------------------------------------------------


def _placement(n, target_len):
    """Where the original samples land after fitting to ``target_len``."""
    if n >= target_len:
        return 0, target_len
    diff = target_len - n
    return diff - diff // 2, n


def test_mixture_protocol(small_corpus, capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(99)
    violations = 0
    for case in range(1000):
        n_spk = int(rng.integers(2, 5))
        corpus = {}
        for i in range(n_spk):
            spk = f"s{i}"
            corpus[spk] = [
                UtteranceRecord(spk, f"u{k}", f"{spk}/u{k}.wav", f"{spk}/u{k}.csv",
                                round(float(rng.uniform(0.3, 5.0)), 2))
                for k in range(int(rng.integers(1, 4)))
            ]
        # brute force: targets with no other-speaker partner within 2 s
        lonely = sum(
            1
            for spk, utts in corpus.items()
            for u in utts
            if not any(abs(u.duration - o.duration) <= 2.0
                       for s2, others in corpus.items() if s2 != spk for o in others)
        )
        n_targets = sum(len(v) for v in corpus.values())
        try:
            specs, skipped = build_manifest_timit_style(corpus, 2.0, mixes_per_utt=2, seed=case)
        except ValueError:
            violations += lonely != n_targets
            continue
        violations += skipped != lonely
        for spec in specs:
            gap = abs(spec.target.duration - spec.interferers[0].duration)
            violations += gap > 2.0 or spec.interferers[0].speaker_id == spec.target.speaker_id
        # pad/truncate one interferer to the target length
        spec = specs[int(rng.integers(len(specs)))]
        n_t = int(round(spec.target.duration * 100)) * 16
        n_i = int(round(spec.interferers[0].duration * 100)) * 16
        x = rng.uniform(-1, 1, n_i)
        out = fit_duration(Waveform(x, 16000), n_t).samples
        front, kept = _placement(n_i, n_t)
        violations += not (
            len(out) == n_t
            and np.array_equal(out[front : front + kept], x[:kept])
            and not np.any(out[:front])
            and not np.any(out[front + kept :])
        )

    corpus, _ = pipeline.scan_corpus(small_corpus)
    grid = build_manifest_grid_style(corpus, n_utt_per_spk=4, mixes_per_utt=2, seed=0)
    counts = {}
    for spec in grid:
        counts[spec.target.speaker_id] = counts.get(spec.target.speaker_id, 0) + 1
    elapsed = time.perf_counter() - t0
    ok = violations == 0 and counts == {"spk0": 8, "spk1": 8, "spk2": 8}
    assert report(capsys, 9, "mixture protocol", ok,
                  f"violations={violations}/1000,grid_counts={sorted(counts.values())}",
                  "0,n_utt*mixes=8", elapsed, 60)

