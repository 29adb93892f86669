"""Pairwise preference training: loss, chunked pre-training and fine-tuning."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .metrics import MetricError, auc
from .model import ScoreModel, predict, score_batch

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class PreferencePair:
    """``target == 1`` means ``smiles_i`` is the easier (more synthesisable) one."""

    smiles_i: str
    smiles_j: str
    target: int | None = None
    source: str = ""
    control: bool = False

    def __post_init__(self):
        if self.target not in (None, 0, 1):
            raise ValueError(f"target must be 0, 1 or None, got {self.target!r}")
        if not self.control and self.smiles_i == self.smiles_j:
            raise ValueError(f"pair members are identical: {self.smiles_i}")

    def flipped(self) -> "PreferencePair":
        t = None if self.target is None else 1 - self.target
        return PreferencePair(self.smiles_j, self.smiles_i, t, self.source, self.control)


@dataclass(frozen=True)
class LossConfig:
    lam: float = 1e-4

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("regularisation weight must be >= 0")


@dataclass
class TrainConfig:
    chunks: int = 25
    epochs_per_chunk: int = 10
    batch_size: int = 128
    lr: float = 3e-4
    ft_batch_size: int = 4
    ft_lr: float | None = None  # None: 1e-4 for graph models, 3e-4 for fingerprints
    val_pairs: int = 5
    max_epochs: int = 20
    patience: int = 3
    acc_delta: float = 0.02
    lam: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        for name in ("chunks", "epochs_per_chunk", "batch_size", "ft_batch_size", "max_epochs", "patience"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.lr <= 0 or (self.ft_lr is not None and self.ft_lr <= 0):
            raise ValueError("learning rates must be positive")
        if self.val_pairs < 0:
            raise ValueError("val_pairs must be >= 0")

    def finetune_lr(self, model: ScoreModel) -> float:
        if self.ft_lr is not None:
            return self.ft_lr
        return 1e-4 if model.config.is_graph else 3e-4


# ---------------------------------------------------------------------------
# loss


def _softplus(z):
    return np.maximum(z, 0) + np.log1p(np.exp(-np.abs(z)))


def pairwise_loss(score_i, score_j, y, cfg: LossConfig = LossConfig()) -> float:
    """BCE(sigmoid(score_i - score_j), y) + lam * mean(score_i^2, score_j^2), batch-averaged."""
    si = np.asarray(score_i, dtype=np.float64)
    sj = np.asarray(score_j, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    # BCE in logit space for binary y: softplus((1 - 2y) * delta)
    ce = _softplus((1.0 - 2.0 * y) * (si - sj))
    reg = (si * si + sj * sj) / 2.0
    return float(np.mean(ce) + cfg.lam * np.mean(reg))


def pairwise_loss_tensor(s_i: ad.Tensor, s_j: ad.Tensor, y: np.ndarray, lam: float) -> ad.Tensor:
    sign = ad.Tensor((1.0 - 2.0 * np.asarray(y, dtype=np.float64)).reshape(s_i.shape).astype(s_i.dtype))
    ce = ad.mean(ad.softplus(ad.mul(sign, ad.sub(s_i, s_j))))
    if lam == 0:
        return ce
    reg = ad.mean(ad.concat([ad.square(s_i), ad.square(s_j)], axis=0))
    return ad.add(ce, ad.scale(reg, lam))


def _batch_step(model: ScoreModel, batch: Sequence[PreferencePair], state: ad.AdamState, lam: float,
                rng: ad.DropoutRNG) -> tuple[float, int]:
    uniq = list(dict.fromkeys(s for p in batch for s in (p.smiles_i, p.smiles_j)))
    index = {s: k for k, s in enumerate(uniq)}
    idx_i = np.array([index[p.smiles_i] for p in batch])
    idx_j = np.array([index[p.smiles_j] for p in batch])
    y = np.array([p.target for p in batch], dtype=np.float64)
    params = model.parameters()
    with ad.Tape() as tape:
        scores = score_batch(model, uniq, "train", rng.start(state.step))
        s_i = ad.gather_rows(scores, idx_i)
        s_j = ad.gather_rows(scores, idx_j)
        loss = pairwise_loss_tensor(s_i, s_j, y, lam)
    value = loss.item()
    if not math.isfinite(value):
        raise TrainingError(f"non-finite loss {value} at optimiser step {state.step}")
    grads = ad.gradients(loss, params, tape)
    if not all(np.all(np.isfinite(g)) for g in grads):
        raise TrainingError(f"non-finite gradient at optimiser step {state.step}")
    ad.adam_step(params, grads, state)
    delta = (s_i.data - s_j.data)[:, 0]
    return value, int(np.sum(_correct(delta, y)))


def _correct(delta: np.ndarray, y: np.ndarray) -> np.ndarray:
    # ties count as wrong
    return np.where(y == 1, delta > 0, delta < 0)


def _check_labeled(pairs: Sequence[PreferencePair]) -> None:
    if not pairs:
        raise InsufficientDataError("no pairs to train on")
    missing = sum(p.target is None for p in pairs)
    if missing:
        raise InsufficientDataError(f"{missing} pair(s) have no target label")


def _run_epoch(model, pairs, order, batch_size, state, lam, rng) -> tuple[float, float]:
    losses, weights, correct = [], [], 0
    for start in range(0, len(order), batch_size):
        batch = [pairs[k] for k in order[start:start + batch_size]]
        value, ok = _batch_step(model, batch, state, lam, rng)
        losses.append(value)
        weights.append(len(batch))
        correct += ok
    return float(np.average(losses, weights=weights)), correct / len(order)


def pretrain(model: ScoreModel, pairs: Sequence[PreferencePair], cfg: TrainConfig = TrainConfig(),
             history_path: str | Path | None = None,
             callback: Callable[[dict], None] | None = None) -> tuple[ScoreModel, list[dict]]:
    """Sequential training over ``cfg.chunks`` equal parts of the shuffled data.

    Updates ``model`` in place and returns it with the per-epoch history.
    """
    _check_labeled(pairs)
    if len(pairs) < cfg.chunks:
        raise InsufficientDataError(f"{len(pairs)} pairs cannot fill {cfg.chunks} chunks")
    rng = np.random.default_rng(cfg.seed)
    parts = np.array_split(rng.permutation(len(pairs)), cfg.chunks)
    state = ad.AdamState(lr=cfg.lr)
    drop = ad.DropoutRNG(cfg.seed)
    history: list[dict] = []
    epoch = 0
    for c, part in enumerate(parts):
        for _ in range(cfg.epochs_per_chunk):
            epoch += 1
            order = part[rng.permutation(len(part))]
            loss, acc = _run_epoch(model, pairs, order, cfg.batch_size, state, cfg.lam, drop)
            rec = {"epoch": epoch, "chunk": c, "split": "train", "loss": loss, "accuracy": acc}
            history.append(rec)
            log.info("pretrain epoch %d chunk %d loss %.4f acc %.3f", epoch, c, loss, acc)
            if callback:
                callback(rec)
    if history_path is not None:
        write_history(history, history_path)
    return model, history


# ---------------------------------------------------------------------------
# early stopping


@dataclass
class EarlyStopState:
    """Stop when the monitored loss rose ``patience`` epochs in a row, when the
    hold-out accuracy sat more than ``acc_delta`` below its best for
    ``patience`` epochs in a row, or at ``max_epochs``."""

    patience: int = 3
    acc_delta: float = 0.02
    max_epochs: int = 20
    epoch: int = 0
    prior_loss: float | None = None
    best_loss: float | None = None
    loss_increases: int = 0
    best_acc: float | None = None
    acc_drops: int = 0
    stopped: bool = False
    reason: str | None = None

    def update(self, loss: float, accuracy: float | None = None) -> bool:
        if self.stopped:
            return True
        self.epoch += 1
        if self.prior_loss is not None and loss > self.prior_loss:
            self.loss_increases += 1
        else:
            self.loss_increases = 0
        self.prior_loss = loss
        self.best_loss = loss if self.best_loss is None else min(self.best_loss, loss)
        if accuracy is not None:
            if self.best_acc is None or accuracy > self.best_acc:
                self.best_acc = accuracy
            # tolerance keeps a drop of exactly acc_delta (e.g. 0.90 -> 0.88) from counting
            if self.best_acc - accuracy > self.acc_delta + 1e-9:
                self.acc_drops += 1
            else:
                self.acc_drops = 0
        if self.loss_increases >= self.patience:
            self.stopped, self.reason = True, "loss"
        elif self.acc_drops >= self.patience:
            self.stopped, self.reason = True, "holdout_accuracy"
        elif self.epoch >= self.max_epochs:
            self.stopped, self.reason = True, "max_epochs"
        return self.stopped


# ---------------------------------------------------------------------------
# fine-tuning and evaluation


def evaluate_pairs(model: ScoreModel, pairs: Sequence[PreferencePair]) -> dict:
    """Sign accuracy of the score difference and its AUC against the labels.

    When every label is the same, the AUC is taken over the pairs together
    with their mirrored copies (-delta, 1 - y).
    """
    if not pairs:
        raise ValueError("no pairs to evaluate")
    _check_labeled(pairs)
    uniq = list(dict.fromkeys(s for p in pairs for s in (p.smiles_i, p.smiles_j)))
    scores = dict(zip(uniq, predict(model, uniq)))
    delta = np.array([scores[p.smiles_i] - scores[p.smiles_j] for p in pairs])
    y = np.array([p.target for p in pairs], dtype=np.float64)
    accuracy = float(np.mean(_correct(delta, y)))
    if 0 < y.sum() < y.size:
        area = auc(delta, y)
    else:
        area = auc(np.concatenate([delta, -delta]), np.concatenate([y, 1 - y]))
    loss = pairwise_loss(delta, np.zeros_like(delta), y, LossConfig(0.0))
    return {"accuracy": accuracy, "auc": area, "n": len(pairs), "loss": loss}


def _eval_loss(model: ScoreModel, pairs: Sequence[PreferencePair], lam: float) -> float:
    uniq = list(dict.fromkeys(s for p in pairs for s in (p.smiles_i, p.smiles_j)))
    scores = dict(zip(uniq, predict(model, uniq)))
    si = np.array([scores[p.smiles_i] for p in pairs])
    sj = np.array([scores[p.smiles_j] for p in pairs])
    y = np.array([p.target for p in pairs])
    return pairwise_loss(si, sj, y, LossConfig(lam))


def finetune(model: ScoreModel, pairs: Sequence[PreferencePair], cfg: TrainConfig = TrainConfig(),
             holdout: Sequence[PreferencePair] | None = None, validation: bool = True,
             history_path: str | Path | None = None,
             callback: Callable[[dict], None] | None = None) -> tuple[ScoreModel, list[dict]]:
    """Fine-tune a copy of ``model`` with every weight trainable.

    With ``validation`` the first ``cfg.val_pairs`` of a seeded shuffle are
    held out and their loss is monitored; without it the training loss is.
    The model of the stopping epoch is returned.
    """
    _check_labeled(pairs)
    pairs = list(pairs)
    rng = np.random.default_rng(cfg.seed)
    if validation and cfg.val_pairs > 0:
        if len(pairs) <= cfg.val_pairs:
            raise InsufficientDataError(
                f"{len(pairs)} pairs leave nothing to train on after {cfg.val_pairs} validation pairs"
            )
        perm = rng.permutation(len(pairs))
        val = [pairs[k] for k in perm[:cfg.val_pairs]]
        train = [pairs[k] for k in perm[cfg.val_pairs:]]
    else:
        val, train = None, pairs
    tuned = model.copy()
    tuned.provenance = {**model.provenance, "finetuned_on": len(train)}
    state = ad.AdamState(lr=cfg.finetune_lr(model))
    drop = ad.DropoutRNG(cfg.seed + 1)
    stopper = EarlyStopState(cfg.patience, cfg.acc_delta, cfg.max_epochs)
    history: list[dict] = []
    if holdout:
        base = evaluate_pairs(tuned, holdout)["accuracy"]
        stopper.best_acc = base
        history.append({"epoch": 0, "split": "holdout", "accuracy": base})

    def emit(rec):
        history.append(rec)
        if callback:
            callback(rec)

    while not stopper.stopped:
        epoch = stopper.epoch + 1
        order = rng.permutation(len(train))
        loss, acc = _run_epoch(tuned, train, order, cfg.ft_batch_size, state, cfg.lam, drop)
        emit({"epoch": epoch, "split": "train", "loss": loss, "accuracy": acc})
        monitored = _eval_loss(tuned, val if val else train, cfg.lam)
        emit({"epoch": epoch, "split": "val" if val else "train_eval", "loss": monitored})
        hold_acc = None
        if holdout:
            hold_acc = evaluate_pairs(tuned, holdout)["accuracy"]
            emit({"epoch": epoch, "split": "holdout", "accuracy": hold_acc})
        stopper.update(monitored, hold_acc)
        log.info("finetune epoch %d loss %.4f monitored %.4f", epoch, loss, monitored)
    history.append({"epoch": stopper.epoch, "split": "stop", "reason": stopper.reason})
    if history_path is not None:
        write_history(history, history_path)
    return tuned, history


def write_history(history: Iterable[dict], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for rec in history:
            fh.write(json.dumps(rec) + "\n")
