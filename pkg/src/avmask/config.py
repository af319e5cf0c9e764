"""Pipeline configuration: one JSON file, with environment overrides for paths."""

import json
import os
from dataclasses import asdict, dataclass, field, fields

from avmask.dsp import StftConfig
from avmask.metrics import BSS_PROJ, SI_SDR
from avmask.mixing import GAIN_POLICIES
from avmask.nn.graph import KINDS, ModelDims
from avmask.train import TrainConfig

ENV_CORPUS = "AVMASK_CORPUS_DIR"
ENV_WORK = "AVMASK_WORK_DIR"


class ConfigError(ValueError):
    pass


@dataclass
class ModelSection:
    kind: str = "AV_CONCAT"
    units: int = 250
    vl2m_layers: int = 5
    concat_layers: int = 3
    refine_layers: int = 1

    def dims(self, n_freq):
        return ModelDims(136, n_freq, self.units, self.vl2m_layers, self.concat_layers,
                         self.refine_layers)


@dataclass
class TrainSection:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 8
    max_epochs: int = 100
    patience: int = 5
    clip_norm: float = None
    pretrain_epochs: int = None
    skip_pretrain: bool = False

    def train_config(self, seed, max_epochs=None):
        return TrainConfig(self.lr, self.beta1, self.beta2, self.eps, self.batch_size,
                           max_epochs or self.max_epochs, self.patience, seed,
                           clip_norm=self.clip_norm)


@dataclass
class DataSection:
    corpus_dir: str = ""
    work_dir: str = "work"
    style: str = "grid"
    n_utt_per_spk: int = 200
    mixes_per_utt: int = 3
    max_dur_gap: float = 2.0
    split: tuple = (25, 4, 4)
    exclude_speakers: tuple = ()
    gain_policy: str = "unit"
    snr_db: float = 0.0
    three_speaker_test: bool = True


@dataclass
class PipelineConfig:
    seed: int = 0
    sample_rate: int = 16000
    fft_size: int = 512
    win_length: int = 400
    hop_length: int = 160
    compress_p: float = 0.3
    alpha: float = 0.6
    clip: float = 10.0
    sdr_variant: str = BSS_PROJ
    filter_taps: int = 512
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    data: DataSection = field(default_factory=DataSection)

    @property
    def stft(self):
        return StftConfig(self.fft_size, self.win_length, self.hop_length, "hann", self.sample_rate)

    def to_dict(self):
        d = asdict(self)
        d["data"]["split"] = list(self.data.split)
        d["data"]["exclude_speakers"] = list(self.data.exclude_speakers)
        return d

    def canonical_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def validate(self, need_corpus=False):
        try:
            self.stft
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.sample_rate != 16000:
            raise ConfigError("the pipeline runs at 16 kHz; resample inputs instead")
        if not 0 < self.compress_p <= 1:
            raise ConfigError("compress_p must lie in (0, 1]")
        if self.clip <= 0:
            raise ConfigError("clip must be positive")
        if self.model.kind not in KINDS:
            raise ConfigError(f"model.kind must be one of {KINDS}")
        if self.sdr_variant not in (BSS_PROJ, SI_SDR):
            raise ConfigError(f"unknown sdr_variant {self.sdr_variant!r}")
        if self.data.style not in ("grid", "timit"):
            raise ConfigError("data.style must be 'grid' or 'timit'")
        if self.data.gain_policy not in GAIN_POLICIES:
            raise ConfigError(f"data.gain_policy must be one of {GAIN_POLICIES}")
        if len(self.data.split) != 3 or min(self.data.split) < 0:
            raise ConfigError("data.split must be three nonnegative counts")
        if self.train.patience < 1 or self.train.lr < 0 or self.train.batch_size < 1:
            raise ConfigError("invalid training hyper-parameters")
        if need_corpus and not os.path.isdir(self.data.corpus_dir):
            raise ConfigError(f"corpus_dir {self.data.corpus_dir!r} does not exist")
        return self


def _build(cls, raw, where):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name: f for f in fields(cls)}
    unknown = set(raw) - set(known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in raw.items():
        sub = {"model": ModelSection, "train": TrainSection, "data": DataSection}.get(name)
        if cls is PipelineConfig and sub is not None:
            value = _build(sub, value, f"{where}.{name}")
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def load_config(path=None, overrides=None):
    """Read a JSON config (or defaults), apply env path overrides and CLI overrides."""
    raw = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    cfg = _build(PipelineConfig, raw, "config")
    if os.environ.get(ENV_CORPUS):
        cfg.data.corpus_dir = os.environ[ENV_CORPUS]
    if os.environ.get(ENV_WORK):
        cfg.data.work_dir = os.environ[ENV_WORK]
    for key, value in (overrides or {}).items():
        if value is not None:
            setattr(cfg, key, value)
    return cfg
