"""Run configuration: line-oriented ``key = value`` files.

Blank lines and ``#`` comments are ignored.  Integer lists are comma
separated.  Relative paths are resolved against the config file's directory.

Keys (defaults in parentheses):

    manifest          JSONL utterance manifest (required)
    embeddings        pretrained word-vector text file (required)
    out_dir           output directory (runs)
    seed              master seed (0)
    fusion            ggf | concat1 | concat2 | single:a_s | single:a_t |
                      single:h_s | single:h_t (ggf)
    kfold             folds for cross-validation; 0 = one held-out split (0)
    epochs            maximum epochs (100)
    batch_size        mini-batch size (32)
    patience          early-stop patience in epochs (10)
    lr                Adam learning rate (0.0001)
    l2                L2 coefficient on weight matrices (0.01)
    dropout           dropout rate at both dropout sites (0.5)
    val_fraction      share of training utterances used for model selection (0.05)
    test_fraction     held-out share when kfold = 0 (0.2)
    max_seconds       utterance cap in seconds (7.5)
    max_tokens        transcript cap in words (25)
    embed_dim         word-vector width (300)
    speech_channels   speech conv widths (64,128)
    speech_kernels    speech conv kernel sizes (5,3)
    speech_pools      speech max-pool sizes, window = stride (4,2)
    text_channels     text conv widths (128)
    text_kernels      text conv kernel sizes (3)
    text_pools        text max-pool sizes (2)
    hidden            LSTM hidden size per direction (128)
    classifier_hidden width of the ReLU layer before the softmax (128)
    standardize       z-score acoustic features with training-split statistics (true)
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .model import FUSION_MODES, ModelConfig


@dataclass
class RunConfig:
    manifest: Path | None = None
    embeddings: Path | None = None
    out_dir: Path = Path("runs")
    seed: int = 0
    fusion: str = "ggf"
    kfold: int = 0
    epochs: int = 100
    batch_size: int = 32
    patience: int = 10
    lr: float = 1e-4
    l2: float = 0.01
    dropout: float = 0.5
    val_fraction: float = 0.05
    test_fraction: float = 0.2
    max_seconds: float = 7.5
    max_tokens: int = 25
    embed_dim: int = 300
    speech_channels: tuple[int, ...] = (64, 128)
    speech_kernels: tuple[int, ...] = (5, 3)
    speech_pools: tuple[int, ...] = (4, 2)
    text_channels: tuple[int, ...] = (128,)
    text_kernels: tuple[int, ...] = (3,)
    text_pools: tuple[int, ...] = (2,)
    hidden: int = 128
    classifier_hidden: int = 128
    standardize: bool = True
    source: Path | None = field(default=None, compare=False)

    def model_config(self, fusion: str | None = None) -> ModelConfig:
        return ModelConfig(
            embed_dim=self.embed_dim,
            speech_channels=self.speech_channels, speech_kernels=self.speech_kernels,
            speech_pools=self.speech_pools,
            text_channels=self.text_channels, text_kernels=self.text_kernels, text_pools=self.text_pools,
            hidden=self.hidden, classifier_hidden=self.classifier_hidden,
            fusion=fusion or self.fusion, dropout=self.dropout,
        )

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def validate(self) -> None:
        if self.fusion not in FUSION_MODES:
            raise ConfigError(f"fusion: must be one of {', '.join(FUSION_MODES)}")
        if self.kfold < 0 or self.kfold == 1:
            raise ConfigError("kfold: must be 0 or >= 2")
        for key in ("epochs", "batch_size", "max_tokens", "embed_dim", "hidden", "classifier_hidden"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key}: must be >= 1")
        if self.patience < 1:
            raise ConfigError("patience: must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout: must be in [0, 1)")
        if self.lr < 0 or self.l2 < 0:
            raise ConfigError("lr and l2 must be non-negative")
        if not 0.0 < self.val_fraction < 1.0 or not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("val_fraction and test_fraction must be in (0, 1)")
        if self.max_seconds <= 0.025:
            raise ConfigError("max_seconds: must exceed one 25 ms frame")
        if not (len(self.speech_channels) == len(self.speech_kernels) == len(self.speech_pools)):
            raise ConfigError("speech_channels, speech_kernels and speech_pools must have equal length")
        if not (len(self.text_channels) == len(self.text_kernels) == len(self.text_pools)):
            raise ConfigError("text_channels, text_kernels and text_pools must have equal length")


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig) if f.name != "source"}
_PATH_KEYS = {"manifest", "embeddings", "out_dir"}


def _convert(key: str, raw: str, default):
    if key in _PATH_KEYS:
        return Path(raw)
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(default, tuple):
        values = tuple(int(v) for v in raw.split(",") if v.strip())
        if not values or any(v < 1 for v in values):
            raise ValueError("expected a comma-separated list of positive integers")
        return values
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def parse_config(text: str, base_dir: Path | None = None, source: Path | None = None) -> RunConfig:
    values = {}
    where = str(source) if source else "<config>"
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{where}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"{where}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{where}:{lineno}: key {key!r} set twice")
        try:
            values[key] = _convert(key, raw, _FIELDS[key].default)
        except ValueError as exc:
            raise ConfigError(f"{where}:{lineno}: bad value for {key!r}: {exc}") from None
    cfg = RunConfig(**values, source=source)
    if base_dir is not None:
        for key in _PATH_KEYS:
            p = getattr(cfg, key)
            if p is not None and not p.is_absolute():
                setattr(cfg, key, base_dir / p)
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, base_dir=path.parent, source=path)


def format_config(cfg: RunConfig) -> str:
    lines = []
    for name in _FIELDS:
        v = getattr(cfg, name)
        if v is None:
            continue
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, Path):
            v = v.as_posix()
        lines.append(f"{name} = {v}")
    return "\n".join(lines) + "\n"
