"""Small models, sequences and configs shared across the tests."""

import json
import os

import numpy as np

from avmask.nn.graph import ModelDims, ModelGraph, Sequence

TINY = ModelDims(n_visual=5, n_freq=4, units=3, vl2m_layers=2, concat_layers=2, refine_layers=1)


def tiny_sequence(T=3, seed=0, dims=TINY):
    rng = np.random.default_rng(seed)
    y_mag = rng.uniform(0.2, 2.0, (T, dims.n_freq))
    mean, std = y_mag.mean(axis=0), y_mag.std(axis=0) + 0.1
    return Sequence(
        v=rng.standard_normal((T, dims.n_visual)),
        y=(y_mag - mean) / std,
        y_mag=y_mag,
        s=rng.uniform(0.0, 2.0, (T, dims.n_freq)),
        m=(rng.random((T, dims.n_freq)) > 0.5).astype(float),
        y_mean=mean,
        y_std=std,
    )


def perturbed(kind, seed=0, dims=TINY, scale=0.5):
    """A model whose biases and weights are all away from their init values."""
    model = ModelGraph.build(kind, dims, seed=seed)
    rng = np.random.default_rng(seed + 100)
    for k in model.params:
        model.params[k] = model.params[k] + scale * rng.standard_normal(model.params[k].shape)
    return model


def zero_model(kind, dims=TINY):
    model = ModelGraph.build(kind, dims)
    for k in model.params:
        model.params[k][...] = 0.0
    return model


def toy_set(n, T=6, seed=0, dims=TINY):
    """Sequences whose clean target is a masked copy of the mixture.

    The binary mask is a smooth function of the visual features, so every
    architecture has something learnable and the oracle mask alone nearly
    determines the target.
    """
    rng = np.random.default_rng(seed)
    proj = rng.standard_normal((dims.n_visual, dims.n_freq))
    seqs = []
    for _ in range(n):
        v = rng.standard_normal((T, dims.n_visual))
        m = (v @ proj > 0).astype(float)
        y_mag = rng.uniform(0.5, 2.0, (T, dims.n_freq))
        mean, std = y_mag.mean(axis=0), y_mag.std(axis=0) + 0.1
        seqs.append(Sequence(
            v=v, y=(y_mag - mean) / std, y_mag=y_mag, s=0.9 * m * y_mag, m=m,
            y_mean=mean, y_std=std,
        ))
    return seqs


def fixture_config(corpus_dir, root, n_utt=4, units=6, max_epochs=2, **data):
    """Write ``root/config.json`` for a synthetic corpus, working under ``root/work``."""
    cfg = {
        "seed": 0,
        "model": {"kind": "AV_CONCAT", "units": units, "vl2m_layers": 1,
                  "concat_layers": 1, "refine_layers": 1},
        "train": {"max_epochs": max_epochs, "patience": 5, "batch_size": 4},
        "data": {
            "corpus_dir": str(corpus_dir),
            "work_dir": os.path.join(str(root), "work"),
            "style": "grid",
            "n_utt_per_spk": n_utt,
            "mixes_per_utt": 1,
            "split": [3, 0, 0],
            "three_speaker_test": False,
            **data,
        },
    }
    path = os.path.join(str(root), "config.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cfg, fh, indent=2)
    return path
