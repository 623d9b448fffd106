"""Experiment plumbing shared by the command-line tools.

Everything here is deterministic given the run config: the held-out split,
fold assignment, initialisation and mini-batch order all derive from
``RunConfig.seed``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .checkpoint import assign_parameters, load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import (
    ManifestRecord,
    UtteranceSample,
    group_folds,
    load_manifest,
    load_samples,
    missing_audio,
    stratified_split,
)
from .errors import CheckpointError, ConfigError, ContractError, ManifestError
from .model import GBAN
from .tensor import make_rng
from .text import Vocabulary, load_pretrained
from .training import FoldResult, TrainConfig, average, fit_and_score

logger = logging.getLogger(__name__)

REP_COLUMNS = ("h_s", "h_t", "a_s", "a_t")
FUSION_COLUMNS = {"Concat-1": "concat1", "Concat-2": "concat2", "GGF": "ggf"}
NORM_MEAN = "input.mean"
NORM_STD = "input.std"


@dataclass
class Workspace:
    config: RunConfig
    records: list[ManifestRecord]
    vocab: Vocabulary


def preflight(cfg: RunConfig) -> list[ManifestRecord]:
    """Check every input a run needs before anything is computed or written."""
    if cfg.manifest is None:
        raise ConfigError("manifest: required")
    if cfg.embeddings is None:
        raise ConfigError("embeddings: required")
    records = load_manifest(cfg.manifest)
    problems = []
    if not Path(cfg.embeddings).is_file():
        problems.append(f"embeddings file not found: {cfg.embeddings}")
    missing = missing_audio(records)
    if missing:
        problems.append(f"{len(missing)} audio file(s) missing for ids: {', '.join(missing)}")
    if problems:
        raise ManifestError("; ".join(problems))
    if cfg.kfold:
        group_folds([r.group for r in records], cfg.kfold)
    return records


def open_workspace(cfg: RunConfig) -> Workspace:
    records = preflight(cfg)
    vocab = load_pretrained(cfg.embeddings, dim=cfg.embed_dim, seed=cfg.seed)
    for w in vocab.warnings:
        logger.warning("embeddings: %s", w)
    return Workspace(cfg, records, vocab)


def load_all(ws: Workspace) -> list[UtteranceSample]:
    return load_samples(ws.records, ws.vocab, ws.config.max_seconds, ws.config.max_tokens)


def train_config(cfg: RunConfig, seed: int | None = None) -> TrainConfig:
    return TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size, patience=cfg.patience, lr=cfg.lr,
                       l2=cfg.l2, val_fraction=cfg.val_fraction, standardize=cfg.standardize,
                       seed=cfg.seed if seed is None else seed)


def splits(cfg: RunConfig, samples: Sequence[UtteranceSample]) -> list[tuple[np.ndarray, np.ndarray]]:
    """(train_idx, test_idx) per fold: leave-group-out when ``kfold`` is set, else one stratified split."""
    if cfg.kfold:
        folds = group_folds([s.group for s in samples], cfg.kfold)
        every = np.arange(len(samples))
        return [(np.setdiff1d(every, test), test) for test in folds]
    kept, held = stratified_split([s.label for s in samples], cfg.test_fraction, make_rng(cfg.seed))
    return [(kept, held)]


def run_protocol(ws: Workspace, samples: Sequence[UtteranceSample], fusion: str | None = None) -> list[FoldResult]:
    """Train and score one model per fold; fold f uses seed ``seed + f``."""
    cfg = ws.config
    model_cfg = cfg.model_config(fusion)
    folds = splits(cfg, samples)
    for f, (train_idx, _) in enumerate(folds):
        if len(train_idx) < cfg.batch_size:
            raise ContractError(
                f"fold {f + 1}: {len(train_idx)} training utterances, fewer than batch_size {cfg.batch_size}")
    results = []
    for f, (train_idx, test_idx) in enumerate(folds):
        train_set = [samples[i] for i in train_idx]
        test_set = [samples[i] for i in test_idx]
        logger.info("fold %d: %s, %d train / %d test", f + 1, model_cfg.fusion, len(train_set), len(test_set))
        results.append(fit_and_score(model_cfg, train_config(cfg, cfg.seed + f), ws.vocab.matrix,
                                     train_set, test_set, f + 1, ws.vocab.pad_index))
    return results


def metrics_report(results: Sequence[FoldResult]) -> str:
    lines = ["fold,train_wa,wa,ua"]
    for r in results:
        lines.append(f"{r.fold},{r.train.wa:.6f},{r.test.wa:.6f},{r.test.ua:.6f}")
    lines.append("avg,{:.6f},{:.6f},{:.6f}".format(
        average([r.train.wa for r in results]), average([r.test.wa for r in results]),
        average([r.test.ua for r in results])))
    return "\n".join(lines) + "\n"


def wa_table(columns: dict[str, Sequence[float]]) -> str:
    """Per-fold WA table with a trailing ``Avg`` row (plain mean of fold values)."""
    names = list(columns)
    n_folds = len(next(iter(columns.values())))
    lines = [",".join(["fold"] + names)]
    for f in range(n_folds):
        lines.append(",".join([str(f + 1)] + [f"{columns[c][f]:.6f}" for c in names]))
    lines.append(",".join(["Avg"] + [f"{average(columns[c]):.6f}" for c in names]))
    return "\n".join(lines) + "\n"


def parse_table(text: str) -> dict[str, dict[str, float]]:
    """Inverse of :func:`wa_table` / :func:`metrics_report`: row label -> column -> value."""
    rows = [line.split(",") for line in text.strip().splitlines()]
    header = rows[0][1:]
    return {row[0]: dict(zip(header, map(float, row[1:]))) for row in rows[1:]}


def compare_representations(ws: Workspace, samples) -> str:
    columns = {}
    for rep in REP_COLUMNS:
        columns[rep] = [r.test.wa for r in run_protocol(ws, samples, f"single:{rep}")]
    return wa_table(columns)


def compare_fusion(ws: Workspace, samples) -> str:
    columns = {}
    for title, mode in FUSION_COLUMNS.items():
        columns[title] = [r.test.wa for r in run_protocol(ws, samples, mode)]
    return wa_table(columns)


def checkpoint_arrays(model: GBAN, norm) -> dict[str, np.ndarray]:
    arrays = {name: p.data for name, p in model.parameters().items()}
    if norm is not None:
        arrays[NORM_MEAN], arrays[NORM_STD] = norm
    return arrays


def save_model(path, model: GBAN, norm) -> None:
    save_checkpoint(path, checkpoint_arrays(model, norm))


def infer_fusion(arrays: dict[str, np.ndarray], cfg: RunConfig) -> str:
    """Fusion mode implied by a checkpoint's parameter set and classifier width."""
    if "ggf.W_z_p" in arrays:
        return "ggf"
    if "clf.W_g" not in arrays:
        raise CheckpointError("checkpoint has no classifier weights")
    rep = 2 * cfg.hidden
    width = arrays["clf.W_g"].shape[1]
    if width == 2 * rep:
        return "concat1"
    if width == 4 * rep:
        return "concat2"
    if width == rep and cfg.fusion.startswith("single:"):
        return cfg.fusion
    raise CheckpointError(
        f"cannot tell the fusion mode of a checkpoint with classifier input width {width}; pass --fusion")


def load_model(path, ws: Workspace, fusion: str | None = None) -> tuple[GBAN, tuple | None]:
    """Rebuild a model from ``path``; the fusion mode defaults to the one the checkpoint holds."""
    arrays = load_checkpoint(path)
    if fusion is None:
        fusion = infer_fusion(arrays, ws.config)
    model = GBAN(ws.config.model_config(fusion), ws.vocab.matrix, pad_index=ws.vocab.pad_index)
    assign_parameters(model.parameters(), arrays, source=str(path))
    norm = None
    if NORM_MEAN in arrays:
        norm = (arrays[NORM_MEAN], arrays[NORM_STD])
        if norm[0].shape != (model.config.speech_dim,):
            raise CheckpointError(f"{path}: feature statistics have shape {norm[0].shape}")
    return model, norm


def alignment_csv(matrix: np.ndarray) -> str:
    return "\n".join(",".join(f"{v:.8f}" for v in row) for row in matrix) + "\n"
