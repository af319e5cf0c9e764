"""Adam optimization, early stopping and the two-stage refinement protocol."""

import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from avmask.nn.checkpoint import Checkpoint
from avmask.nn.graph import REFINE_KINDS

log = logging.getLogger(__name__)

SINGLE = "SINGLE"
PRETRAIN_ORACLE = "PRETRAIN_ORACLE"
REFINE = "REFINE"


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 8
    max_epochs: int = 100
    patience: int = 5
    seed: int = 0
    stage: str = SINGLE
    clip_norm: float = None

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.lr < 0:
            raise ValueError("lr must be nonnegative")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state, cfg, trainable=None):
    """In-place bias-corrected Adam update of every parameter with a gradient.

    ``trainable`` optionally filters parameter names; skipped parameters are
    left untouched.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = int(np.sum(~np.isfinite(g)))
            raise FloatingPointError(f"{bad} non-finite gradient entries in {name}")
    state.step += 1
    t = state.step
    c1 = 1.0 - cfg.beta1**t
    c2 = 1.0 - cfg.beta2**t
    for name, g in grads.items():
        if trainable is not None and not trainable(name):
            continue
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        params[name] -= cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
    return params, state


class EarlyStopping:
    """Stop once validation loss has not strictly improved for ``patience`` epochs."""

    def __init__(self, patience=5):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = 0
        self.epoch = 0
        self.since_best = 0

    def update(self, val_loss):
        """Record one epoch; returns ``(improved, should_stop)``."""
        self.epoch += 1
        if val_loss < self.best:
            self.best = val_loss
            self.best_epoch = self.epoch
            self.since_best = 0
            return True, False
        self.since_best += 1
        return False, self.since_best >= self.patience


@dataclass
class FitResult:
    checkpoint: Checkpoint
    history: list
    best_epoch: int
    stopped_early: bool = False
    diverged: bool = False


def _clip(grads, max_norm):
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > max_norm:
        for g in grads.values():
            g *= max_norm / norm


def fit(model, train_set, val_set, cfg=TrainConfig(), history_path=None, on_epoch=None):
    """Minibatch Adam with early stopping on the validation loss.

    The model is updated in place; the returned checkpoint holds a copy of
    the parameters from the best validation epoch. Validation loss is the
    training objective averaged per sequence. ``on_epoch(row)`` may return
    True to end training after the current epoch.
    """
    if not train_set or not val_set:
        raise ValueError("training and validation sets must be nonempty")
    rng = np.random.default_rng(cfg.seed)
    state = AdamState()
    stopper = EarlyStopping(cfg.patience)
    best = model.copy()
    history = []
    stopped = diverged = False
    hist_fh = open(history_path, "w", encoding="utf-8") if history_path else None
    try:
        for epoch in range(1, cfg.max_epochs + 1):
            t0 = time.perf_counter()
            order = rng.permutation(len(train_set))
            train_loss = 0.0
            for start in range(0, len(order), cfg.batch_size):
                batch = [train_set[i] for i in order[start : start + cfg.batch_size]]
                loss, grads = model.loss_and_grads(batch)
                if cfg.clip_norm:
                    _clip(grads, cfg.clip_norm)
                adam_step(model.params, grads, state, cfg, model.is_trainable)
                train_loss += loss
            val_loss = model.loss(val_set) / len(val_set)
            row = {
                "epoch": epoch,
                "train_loss": train_loss / len(train_set),
                "val_loss": val_loss,
                "wall_time": time.perf_counter() - t0,
            }
            history.append(row)
            if hist_fh:
                hist_fh.write(json.dumps(row) + "\n")
            halt = bool(on_epoch(row)) if on_epoch else False
            if not np.isfinite(val_loss):
                log.error("validation loss diverged at epoch %d; keeping epoch %d",
                          epoch, stopper.best_epoch)
                diverged = True
                break
            improved, stop = stopper.update(val_loss)
            if improved:
                best = model.copy()
            if stop or halt:
                stopped = True
                break
    finally:
        if hist_fh:
            hist_fh.close()
    meta = {
        "best_epoch": stopper.best_epoch,
        "best_val_loss": float(stopper.best) if np.isfinite(stopper.best) else None,
        "epochs_run": len(history),
        "seed": cfg.seed,
        "stage": cfg.stage,
        "train_config": asdict(cfg),
    }
    return FitResult(Checkpoint(best, meta), history, stopper.best_epoch, stopped, diverged)


def fit_two_stage(model, vl2m_checkpoint, train_set, val_set, cfg_pretrain, cfg_refine,
                  skip_pretrain=False, history_path=None):
    """Oracle-mask pretraining, then refinement behind a frozen trained VL2M.

    Stage 1 feeds the oracle binary mask in place of the VL2M estimate.
    Stage 2 loads the VL2M parameters from ``vl2m_checkpoint``, freezes
    them and continues training the remaining components.
    """
    if model.kind not in REFINE_KINDS:
        raise ValueError(f"two-stage training applies to {REFINE_KINDS}, not {model.kind}")
    if vl2m_checkpoint is None:
        raise ValueError("stage 2 requires a trained VL2M checkpoint")
    histories = {}
    if not skip_pretrain:
        model.use_oracle_mask = True
        model.freeze("vl2m")
        res1 = fit(model, train_set, val_set, _with_stage(cfg_pretrain, PRETRAIN_ORACLE),
                   history_path=_suffix(history_path, "stage1"))
        model.params = res1.checkpoint.model.params
        histories["stage1"] = res1.history
    model.load_component(vl2m_checkpoint.model, "vl2m")
    model.freeze("vl2m")
    model.use_oracle_mask = False
    res2 = fit(model, train_set, val_set, _with_stage(cfg_refine, REFINE),
               history_path=_suffix(history_path, "stage2"))
    res2.checkpoint.model.use_oracle_mask = False
    res2.checkpoint.metadata["pretrained_with_oracle"] = not skip_pretrain
    histories["stage2"] = res2.history
    res2.history = histories
    return res2


def _with_stage(cfg, stage):
    return TrainConfig(**{**asdict(cfg), "stage": stage})


def _suffix(path, tag):
    if path is None:
        return None
    path = str(path)
    stem, dot, ext = path.rpartition(".")
    return f"{stem}.{tag}.{ext}" if dot else f"{path}.{tag}"
