"""Mini-batch training with Adam, model selection, evaluation, k-fold protocol."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .classifier import l2_gradients, nll_loss
from .data import UtteranceSample, feature_stats, group_folds, make_batch, random_split
from .errors import ContractError
from .metrics import EvalMetrics, confusion_matrix, metrics_from_confusion, predict
from .model import GBAN, Batch, ModelConfig
from .optim import AdamState, adam_step
from .tensor import Tape, backward, make_rng

logger = logging.getLogger(__name__)

EVAL_BATCH = 64


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    patience: int = 10
    lr: float = 1e-4
    l2: float = 0.01
    val_fraction: float = 0.05
    standardize: bool = True
    seed: int = 0


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_wa: float
    val_loss: float


@dataclass
class TrainResult:
    log: list[EpochRecord]
    best_epoch: int
    norm: tuple[np.ndarray, np.ndarray] | None
    val_ids: list[str] = field(default_factory=list)

    def log_csv(self) -> str:
        lines = ["epoch,train_loss,val_wa"]
        lines += [f"{r.epoch},{r.train_loss:.10f},{r.val_wa:.6f}" for r in self.log]
        return "\n".join(lines) + "\n"


@dataclass
class Predictions:
    probs: np.ndarray
    labels: np.ndarray
    z_p: np.ndarray | None = None
    z_q: np.ndarray | None = None
    loss: float = 0.0


def iterate_batches(samples: Sequence[UtteranceSample], size: int, norm=None):
    for start in range(0, len(samples), size):
        yield make_batch(samples[start:start + size], norm)


def run_inference(model: GBAN, samples: Sequence[UtteranceSample], norm=None) -> Predictions:
    probs, zp, zq = [], [], []
    loss = 0.0
    for batch in iterate_batches(samples, EVAL_BATCH, norm):
        out = model.forward(batch, training=False)
        probs.append(out.probs.data)
        loss += nll_loss(out.probs, batch.labels).item()
        if out.z_p is not None:
            zp.append(out.z_p.data)
            zq.append(out.z_q.data)
    return Predictions(
        np.concatenate(probs), np.array([s.label for s in samples]),
        np.concatenate(zp) if zp else None, np.concatenate(zq) if zq else None,
        loss / max(1, len(samples)),
    )


def evaluate(model: GBAN, samples: Sequence[UtteranceSample], norm=None) -> EvalMetrics:
    pred = run_inference(model, samples, norm)
    cm = confusion_matrix(pred.labels, predict(pred.probs), model.config.n_classes)
    return metrics_from_confusion(cm)


def _training_step(model: GBAN, params: dict, weights: list[str], state: AdamState, batch: Batch,
                   cfg: TrainConfig, rng) -> float:
    with Tape() as tape:
        out = model.forward(batch, training=True, rng=rng)
        loss = nll_loss(out.probs, batch.labels) * (1.0 / len(batch))
    backward(tape, loss)
    grads = {name: (p.grad if p.grad is not None else np.zeros_like(p.data)) for name, p in params.items()}
    for name, g in l2_gradients([params[n] for n in weights], cfg.l2).items():
        grads[name] = grads[name] + g
    adam_step(state, params, grads)
    for p in params.values():
        p.zero_grad()
    return loss.item()


def train(model: GBAN, samples: Sequence[UtteranceSample], cfg: TrainConfig) -> TrainResult:
    """Fit ``model`` in place and leave it holding the best-validation parameters.

    A held-out ``val_fraction`` of ``samples`` drives model selection: an epoch
    improves on the best so far if its validation WA is higher, or equal with
    a lower validation loss.  Training stops after ``patience`` epochs without
    improvement.
    """
    if len(samples) < cfg.batch_size:
        raise ContractError(f"dataset of {len(samples)} utterances is smaller than batch size {cfg.batch_size}")
    rng = make_rng(cfg.seed)
    fit_idx, val_idx = random_split(len(samples), cfg.val_fraction, rng)
    fit = [samples[i] for i in fit_idx]
    val = [samples[i] for i in val_idx]
    norm = feature_stats(fit) if cfg.standardize else None

    params = model.parameters()
    weights = model.weight_names()
    state = AdamState(lr=cfg.lr)
    log: list[EpochRecord] = []
    best = (-1.0, np.inf)
    best_params = {name: p.data.copy() for name, p in params.items()}
    best_epoch, stale = 0, 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(fit))
        shuffled = [fit[i] for i in order]
        losses = []
        for batch in iterate_batches(shuffled, cfg.batch_size, norm):
            losses.append(_training_step(model, params, weights, state, batch, cfg, rng) * len(batch))
        train_loss = float(np.sum(losses) / len(fit))
        pred = run_inference(model, val, norm)
        val_wa = metrics_from_confusion(
            confusion_matrix(pred.labels, predict(pred.probs), model.config.n_classes)).wa
        log.append(EpochRecord(epoch, train_loss, val_wa, pred.loss))
        logger.info("epoch %d loss %.4f val_wa %.4f", epoch, train_loss, val_wa)
        if (val_wa, -pred.loss) > (best[0], -best[1]):
            best = (val_wa, pred.loss)
            best_params = {name: p.data.copy() for name, p in params.items()}
            best_epoch, stale = epoch, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    for name, p in params.items():
        p.data = best_params[name]
    return TrainResult(log, best_epoch, norm, [s.id for s in val])


@dataclass
class FoldResult:
    fold: int
    test: EvalMetrics
    train: EvalMetrics
    result: TrainResult
    model: GBAN


def fit_and_score(model_cfg: ModelConfig, train_cfg: TrainConfig, embeddings: np.ndarray,
                  train_set: Sequence[UtteranceSample], test_set: Sequence[UtteranceSample],
                  fold: int = 0, pad_index: int = 0) -> FoldResult:
    model = GBAN(model_cfg, embeddings, pad_index=pad_index, seed=train_cfg.seed)
    result = train(model, train_set, train_cfg)
    return FoldResult(fold, evaluate(model, test_set, result.norm), evaluate(model, train_set, result.norm),
                      result, model)


def kfold_run(model_cfg: ModelConfig, train_cfg: TrainConfig, embeddings: np.ndarray,
              samples: Sequence[UtteranceSample], k: int, pad_index: int = 0) -> list[FoldResult]:
    """Leave-group-out cross-validation; fold f trains with seed ``seed + f``."""
    folds = group_folds([s.group for s in samples], k)
    results = []
    for f, test_idx in enumerate(folds):
        test_mask = np.zeros(len(samples), dtype=bool)
        test_mask[test_idx] = True
        train_set = [s for s, m in zip(samples, test_mask) if not m]
        test_set = [s for s, m in zip(samples, test_mask) if m]
        cfg = TrainConfig(**{**train_cfg.__dict__, "seed": train_cfg.seed + f})
        results.append(fit_and_score(model_cfg, cfg, embeddings, train_set, test_set, f + 1, pad_index))
    return results


def average(values: Sequence[float]) -> float:
    return float(np.mean(values))
