"""Losses, the Adam training loop, the two evaluation protocols and AUC."""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from scipy.stats import rankdata

from .batching import BatchInput, collate, collate_fused
from .core import InteractionLog
from .expansion import CORRECT, INCORRECT, expand, fuse_groups
from .ingestion import Fold, window_questions
from .models import KTModel, ModelConfig, build_model, save_checkpoint
from .seeding import int_seed, rng_for

log = logging.getLogger(__name__)


class EmptyMask(ValueError):
    pass


class DegenerateLabels(ValueError):
    pass


class Divergence(RuntimeError):
    pass


# --------------------------------------------------------------------------
# metrics and losses


def auc(predictions, targets) -> float:
    """Mann-Whitney AUC with average ranks, so tied scores count one half."""
    p = np.asarray(predictions, dtype=np.float64).ravel()
    y = np.asarray(targets).ravel().astype(bool)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels(f"AUC needs both classes (got {n_pos} positive, {n_neg} negative)")
    ranks = rankdata(p)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def bce_loss(predictions: torch.Tensor, targets: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy over valid positions (logs clamped at -100)."""
    if predictions.shape != targets.shape or predictions.shape != valid.shape:
        raise ValueError("predictions, targets and valid must share one shape")
    n = valid.sum()
    if n == 0:
        raise EmptyMask("no valid positions")
    per = F.binary_cross_entropy(predictions, targets.to(predictions.dtype), reduction="none")
    return (per * valid).sum() / n


def dkt_plus_regularizers(outputs: torch.Tensor, batch: BatchInput, lambda_r: float = 0.1,
                          lambda_w1: float = 0.03, lambda_w2: float = 3.0) -> torch.Tensor:
    """Reconstruction plus L1/L2 waviness penalties of DKT+.

    ``outputs`` are y_t (batch x len x n_kcs) after consuming step t. The
    reconstruction term only covers steps whose input carried the true label.
    """
    valid = batch.valid
    total = outputs.new_zeros(())
    if lambda_r:
        seen = valid & ((batch.label == INCORRECT) | (batch.label == CORRECT))
        if seen.any():
            y_cur = outputs.gather(-1, batch.kc.unsqueeze(-1)).squeeze(-1)
            total = total + lambda_r * bce_loss(y_cur, batch.target, seen)
    pairs = valid[:, 1:] & valid[:, :-1]
    n_pairs = pairs.sum()
    if n_pairs > 0 and (lambda_w1 or lambda_w2):
        diff = (outputs[:, 1:] - outputs[:, :-1]) * pairs.unsqueeze(-1)
        C = outputs.shape[-1]
        total = total + lambda_w1 * diff.abs().sum() / (n_pairs * C)
        total = total + lambda_w2 * diff.pow(2).sum() / (n_pairs * C)
    return total


# --------------------------------------------------------------------------
# data plumbing


def model_items(config: ModelConfig, log_: InteractionLog):
    """Expanded (or fused) per-sequence items matching the model's label policy."""
    if config.fuse:
        return fuse_groups(log_)
    return expand(log_, config.policy)


def make_batch(config: ModelConfig, items) -> BatchInput:
    return collate_fused(items) if config.fuse else collate(items)


def iter_batches(config: ModelConfig, items, batch_size: int, order=None):
    order = np.arange(len(items)) if order is None else order
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        yield idx, make_batch(config, [items[i] for i in idx])


# --------------------------------------------------------------------------
# evaluation


@dataclass
class EvalReport:
    protocol: str
    student: np.ndarray
    window: np.ndarray
    ordinal: np.ndarray
    question: np.ndarray
    prediction: np.ndarray
    target: np.ndarray
    auc: float
    step_predictions: list = field(repr=False, default_factory=list)
    fold: int | None = None
    wall_clock: float = 0.0
    model: str = ""
    dataset: str = ""

    def __len__(self) -> int:
        return len(self.prediction)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["student_id", "question_ordinal", "question_id", "prediction", "target"])
            for row in zip(self.student.tolist(), self.ordinal.tolist(), self.question.tolist(),
                           self.prediction.tolist(), self.target.tolist()):
                w.writerow([row[0], row[1], row[2], repr(float(row[3])), int(row[4])])

    def summary(self) -> dict:
        return {"protocol": self.protocol, "auc": self.auc, "n": len(self), "fold": self.fold,
                "model": self.model, "dataset": self.dataset, "wall_clock": self.wall_clock}


@torch.no_grad()
def predict_steps(model: KTModel, items, withhold_current: bool, batch_size: int = 64) -> list[np.ndarray]:
    """Per-item step probabilities from one forward pass per batch."""
    was_training = model.training
    model.eval()
    out: list[np.ndarray | None] = [None] * len(items)
    order = np.argsort([len(it) for it in items], kind="stable")
    try:
        for idx, batch in iter_batches(model.config, items, batch_size, order):
            probs = model(batch, withhold_current=withhold_current).double().numpy()
            for row, i in enumerate(idx):
                out[i] = probs[row, :len(items[i])]
    finally:
        model.train(was_training)
    return out


def _safe_auc(pred, target) -> float:
    try:
        return auc(pred, target)
    except DegenerateLabels:
        log.warning("AUC undefined: only one class present")
        return float("nan")


def _question_rows(items):
    rows = {"student": [], "window": [], "ordinal": [], "question": [], "target": []}
    for it in items:
        n = len(it)
        if hasattr(it, "question_ordinal"):
            first = np.r_[True, it.question_ordinal[1:] != it.question_ordinal[:-1]]
            rows["ordinal"].append(it.question_ordinal[first])
            rows["question"].append(it.question[first])
            rows["target"].append(it.target[first])
        else:
            rows["ordinal"].append(np.arange(n))
            rows["question"].append(np.asarray(it.question))
            rows["target"].append(np.asarray(it.target))
        k = len(rows["ordinal"][-1])
        rows["student"].append(np.full(k, it.student))
        rows["window"].append(np.full(k, it.window))
    return {k: np.concatenate(v) for k, v in rows.items()}


def evaluate_one_by_one(model: KTModel, log_: InteractionLog, fold: int | None = None,
                        batch_size: int = 64, dataset: str = "") -> EvalReport:
    """Score every expanded KC step from a single forward pass (leaks for flag-free models)."""
    t0 = time.perf_counter()
    items = model_items(model.config, log_)
    steps = predict_steps(model, items, withhold_current=False, batch_size=batch_size)
    pred = np.concatenate(steps)
    target = np.concatenate([np.asarray(it.target) for it in items])
    if model.config.fuse:
        meta = _question_rows(items)
    else:
        meta = {
            "student": np.concatenate([np.full(len(it), it.student) for it in items]),
            "window": np.concatenate([np.full(len(it), it.window) for it in items]),
            "ordinal": np.concatenate([it.question_ordinal for it in items]),
            "question": np.concatenate([it.question for it in items]),
        }
    return EvalReport("one_by_one", meta["student"], meta["window"], meta["ordinal"], meta["question"],
                      pred, target.astype(np.int64), _safe_auc(pred, target), steps, fold,
                      time.perf_counter() - t0, model.config.name, dataset)


def evaluate_all_in_one(model: KTModel, log_: InteractionLog, fold: int | None = None,
                        batch_size: int = 64, dataset: str = "") -> EvalReport:
    """Score each question's KCs without any label from that question, then average per question."""
    t0 = time.perf_counter()
    items = model_items(model.config, log_)
    steps = predict_steps(model, items, withhold_current=True, batch_size=batch_size)
    per_q = []
    for it, p in zip(items, steps):
        if hasattr(it, "question_ordinal"):
            counts = np.bincount(it.question_ordinal)
            per_q.append(np.bincount(it.question_ordinal, weights=p) / counts)
        else:
            per_q.append(p)
    pred = np.concatenate(per_q)
    meta = _question_rows(items)
    return EvalReport("all_in_one", meta["student"], meta["window"], meta["ordinal"], meta["question"],
                      pred, meta["target"].astype(np.int64), _safe_auc(pred, meta["target"]), steps,
                      fold, time.perf_counter() - t0, model.config.name, dataset)


def evaluate(model, log_, protocol: str, **kw) -> EvalReport:
    protocol = protocol.replace("-", "_")
    if protocol == "one_by_one":
        return evaluate_one_by_one(model, log_, **kw)
    if protocol == "all_in_one":
        return evaluate_all_in_one(model, log_, **kw)
    raise ValueError(f"unknown protocol {protocol!r}")


# --------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    batch_size: int | None = None
    max_epochs: int = 15
    patience: int = 5
    seed: int = 0
    lambda_r: float = 0.1
    lambda_w1: float = 0.03
    lambda_w2: float = 3.0
    val_all_in_one: bool = False
    max_questions: int = 150
    truncate_last: bool = False
    eval_batch_size: int = 64
    grad_clip: float | None = None

    def batch_size_for(self, config: ModelConfig) -> int:
        if self.batch_size:
            return self.batch_size
        return 128 if config.family in ("dkt", "dkt_plus") else 24

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class FoldResult:
    fold: int
    model: KTModel
    best_epoch: int
    best_val: float
    curve: list[dict]
    checkpoint: Path | None = None


def training_loss(model: KTModel, batch: BatchInput, tcfg: TrainConfig) -> torch.Tensor:
    if model.config.family == "dkt_plus":
        probs, outputs = model(batch, return_outputs=True)
        return bce_loss(probs, batch.target, batch.valid) + dkt_plus_regularizers(
            outputs, batch, tcfg.lambda_r, tcfg.lambda_w1, tcfg.lambda_w2)
    return bce_loss(model(batch), batch.target, batch.valid)


def train_fold(config: ModelConfig, train_log: InteractionLog, val_log: InteractionLog | None,
               tcfg: TrainConfig, fold: int = 0) -> FoldResult:
    """Adam training with early stopping on validation AUC; returns the best model."""
    torch.manual_seed(int_seed(tcfg.seed, "init", fold))
    model = build_model(config)
    opt = torch.optim.Adam(model.parameters(), lr=tcfg.lr, betas=tcfg.betas, eps=tcfg.eps)
    items = model_items(config, train_log)
    bs = tcfg.batch_size_for(config)
    has_val = val_log is not None and len(val_log.sequences) > 0
    evaluate_val = evaluate_all_in_one if tcfg.val_all_in_one else evaluate_one_by_one

    best_state, best_val, best_epoch, stale = None, -math.inf, -1, 0
    curve = []
    for epoch in range(tcfg.max_epochs):
        model.train()
        order = rng_for(tcfg.seed, "shuffle", fold, epoch).permutation(len(items))
        torch.manual_seed(int_seed(tcfg.seed, "dropout", fold, epoch))
        total, n_batches = 0.0, 0
        for _, batch in iter_batches(config, items, bs, order):
            loss = training_loss(model, batch, tcfg)
            if not torch.isfinite(loss):
                raise Divergence(f"{config.name}: non-finite loss {loss.item()} at epoch {epoch}, "
                                 f"batch {n_batches}")
            opt.zero_grad()
            loss.backward()
            if tcfg.grad_clip:
                torch.nn.utils.clip_grad_norm_(model.parameters(), tcfg.grad_clip)
            opt.step()
            total += loss.item()
            n_batches += 1
        entry = {"epoch": epoch, "train_loss": total / max(n_batches, 1)}
        if has_val:
            entry["val_auc"] = evaluate_val(model, val_log, batch_size=tcfg.eval_batch_size).auc
            metric = entry["val_auc"]
        else:
            metric = -entry["train_loss"]
        curve.append(entry)
        log.info("%s fold %d epoch %d: %s", config.name, fold, epoch, entry)
        if metric > best_val:
            best_val, best_epoch, stale = metric, epoch, 0
            best_state = copy.deepcopy(model.state_dict())
        else:
            stale += 1
            if stale >= tcfg.patience:
                break
    model.load_state_dict(best_state)
    model.eval()
    return FoldResult(fold, model, best_epoch, best_val, curve)


def train(config: ModelConfig, log_: InteractionLog, folds: list[Fold], tcfg: TrainConfig,
          out_dir=None, only_folds=None) -> list[FoldResult]:
    """Train one model per fold; student splits are windowed after splitting."""
    results = []
    for k, fold in enumerate(folds):
        if only_folds is not None and k not in only_folds:
            continue
        train_log = window_questions(log_.subset(fold.train), tcfg.max_questions, tcfg.truncate_last)
        val_log = (window_questions(log_.subset(fold.val), tcfg.max_questions, tcfg.truncate_last)
                   if fold.val else None)
        res = train_fold(config, train_log, val_log, tcfg, fold=k)
        if out_dir is not None:
            out = Path(out_dir)
            res.checkpoint = save_checkpoint(res.model, out / f"fold{k}.ckpt",
                                             {"train": tcfg.to_dict(), "fold": k, "best_epoch": res.best_epoch})
            (out / f"fold{k}_curve.json").write_text(json.dumps(res.curve, indent=1))
        results.append(res)
    return results
