"""Optimiser, learning-rate schedule, the training loop and evaluation."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import metrics
from .data import AugmentationPolicy, Sample, SplitManifest, batches, normalize
from .errors import ConfigurationError, ContractError, NonFiniteError
from .model import CViTModel, predict_proba
from .nn import bce_with_logits
from .tensor import Tape, backward

logger = logging.getLogger(__name__)

MAX_VIDEO_FRAMES = 30


@dataclass
class AdamState:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-7
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Dict[str, "Tensor"], grads: Dict[str, np.ndarray], state: AdamState) -> AdamState:
    """One bias-corrected Adam update with decoupled weight decay, in place.

    Every gradient is checked before any parameter moves, so a non-finite
    gradient leaves parameters and moments untouched.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {name!r}")
        if g.shape != params[name].shape:
            raise ContractError(f"gradient shape {g.shape} for {name!r} != {params[name].shape}")
    state.t += 1
    lr, wd = state.learning_rate, state.weight_decay
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, g in grads.items():
        p = params[name].data
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        if wd:
            p -= (lr * wd) * p
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)
    return state


@dataclass(frozen=True)
class Schedule:
    base_lr: float = 1e-4
    gamma: float = 0.1
    step_size: int = 15
    total_epochs: int = 50

    def __post_init__(self):
        if self.base_lr <= 0 or not 0 < self.gamma <= 1 or self.step_size < 1 or self.total_epochs < 0:
            raise ConfigurationError(f"invalid schedule {self}")


def lr_at(schedule: Schedule, epoch: int) -> float:
    """base_lr * gamma ** (epoch // step_size), evaluated in decimal so 1e-4 * 0.1 is exactly 1e-5."""
    if not 0 <= epoch < max(schedule.total_epochs, 1):
        raise ContractError(f"epoch {epoch} outside [0, {schedule.total_epochs})")
    k = epoch // schedule.step_size
    return float(Decimal(repr(schedule.base_lr)) * Decimal(repr(schedule.gamma)) ** k)


# ------------------------------------------------------------ evaluation


@dataclass
class VideoVerdict:
    video_id: str
    frame_probabilities: List[float]
    aggregate: float
    label_out: str  # "real" or "fake"
    label_true: Optional[int] = None


def aggregate_video(video_id: str, probabilities: Sequence[float], label_true: Optional[int] = None,
                    max_frames: int = MAX_VIDEO_FRAMES) -> VideoVerdict:
    """Mean fake-probability over at most ``max_frames`` frames; >= 0.5 means fake."""
    probs = [float(p) for p in probabilities][:max_frames]
    if not probs:
        raise ContractError(f"video {video_id!r} has no frames")
    agg = float(np.mean(probs))
    return VideoVerdict(video_id, probs, agg, "fake" if agg >= 0.5 else "real", label_true)


def classify_video(model: CViTModel, frames, video_id: str = "video",
                   max_frames: int = MAX_VIDEO_FRAMES) -> VideoVerdict:
    """Classify one video from its face crops, (F, 3, S, S) in [0, 1]."""
    frames = np.asarray(frames, dtype=np.float32)
    if frames.ndim != 4 or len(frames) == 0:
        raise ContractError("classify_video needs a non-empty (F, 3, S, S) frame stack")
    was_training = model.training
    model.eval()
    try:
        probs = predict_proba(model, normalize(frames[:max_frames]))
    finally:
        model.training = was_training
    return aggregate_video(video_id, probs, max_frames=max_frames)


@dataclass
class MetricsReport:
    accuracy: float
    log_loss: float
    auc: Optional[float]
    thresholds: Optional[np.ndarray]
    fpr: Optional[np.ndarray]
    tpr: Optional[np.ndarray]
    videos: List[VideoVerdict]
    scores: np.ndarray
    labels: np.ndarray

    @property
    def roc_points(self):
        if self.fpr is None:
            return []
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))

    @property
    def video_accuracy(self) -> Optional[float]:
        judged = [v for v in self.videos if v.label_true is not None]
        if not judged:
            return None
        return float(np.mean([(v.label_out == "fake") == (v.label_true == 1) for v in judged]))

    def summary(self) -> dict:
        return {"accuracy": self.accuracy, "log_loss": self.log_loss, "auc": self.auc,
                "video_accuracy": self.video_accuracy, "frames": int(self.labels.size),
                "videos": len(self.videos)}


def report_from_scores(scores, labels, video_ids: Optional[Sequence[str]] = None,
                       frame_indices: Optional[Sequence[int]] = None) -> MetricsReport:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64)
    if scores.size == 0:
        raise ContractError("evaluation of an empty split")
    if labels.min() == labels.max():
        logger.warning("split holds a single class; AUC is undefined and omitted")
        auc, thr, fpr, tpr = None, None, None, None
    else:
        thr, fpr, tpr = metrics.roc_curve(scores, labels)
        auc = metrics.auc_trapezoid(fpr, tpr)
    videos: List[VideoVerdict] = []
    if video_ids is not None:
        frame_indices = range(len(scores)) if frame_indices is None else frame_indices
        groups: Dict[str, list] = {}
        for s, y, vid, fi in zip(scores, labels, video_ids, frame_indices):
            groups.setdefault(vid, []).append((fi, s, int(y)))
        for vid in sorted(groups):
            rows = sorted(groups[vid], key=lambda r: r[0])
            videos.append(aggregate_video(vid, [r[1] for r in rows], label_true=rows[0][2]))
    return MetricsReport(metrics.accuracy(scores, labels), metrics.bce_loss(scores, labels),
                         auc, thr, fpr, tpr, videos, scores, labels)


def evaluate(model: CViTModel, samples: Sequence[Sample], batch_size: int = 32) -> MetricsReport:
    """Frame-level accuracy, log loss, ROC/AUC plus per-video verdicts, in eval mode."""
    if not samples:
        raise ContractError("evaluation of an empty split")
    was_training = model.training
    model.eval()
    try:
        scores = np.concatenate([predict_proba(model, x, batch_size)
                                 for x, _ in batches(samples, batch_size, mode="eval")])
    finally:
        model.training = was_training
    return report_from_scores(scores, [s.label for s in samples],
                              [s.video_id for s in samples], [s.frame_index for s in samples])


# -------------------------------------------------------------- training


class TrainingAborted(RuntimeError):
    """Loss went non-finite; ``last_good`` holds the state before the bad step."""

    def __init__(self, message: str, last_good: Dict[str, np.ndarray], history: list):
        super().__init__(message)
        self.last_good = last_good
        self.history = history


@dataclass
class TrainResult:
    model: CViTModel
    history: List[dict]
    best_state: Optional[Dict[str, np.ndarray]]
    best_epoch: Optional[int]
    best_metrics: Optional[dict]
    optimizer: AdamState


def _snapshot(model: CViTModel) -> Dict[str, np.ndarray]:
    return {k: v.copy() for k, v in model.state_dict().items()}


def train_step(model: CViTModel, x: np.ndarray, y: np.ndarray, state: AdamState) -> float:
    """Forward, log loss, backward and one Adam update on a single batch."""
    model.train()
    with Tape() as tape:
        loss = bce_with_logits(model(x), y)
    value = float(loss.data)
    if not math.isfinite(value):
        raise NonFiniteError(f"loss is {value}")
    params = model.params
    grads = backward(tape, loss, wrt=params.values())
    adam_step(params, {name: grads[t.id] for name, t in params.items()}, state)
    return value


def train(model: CViTModel, manifest: SplitManifest, schedule: Schedule = Schedule(), seed: int = 0,
          batch_size: int = 32, policy: Optional[AugmentationPolicy] = None, weight_decay: float = 1e-7,
          workers: int = 1, optimizer: Optional[AdamState] = None,
          on_epoch: Optional[Callable[[dict, CViTModel], None]] = None) -> TrainResult:
    """Run ``schedule.total_epochs`` epochs, validating after each one.

    The lowest validation loss seen so far is retained in ``best_state``.
    Training batches of one sample are skipped because batch statistics are
    undefined for them.
    """
    if not manifest.train or not manifest.val:
        raise ContractError("training needs non-empty train and validation splits")
    policy = policy or AugmentationPolicy()
    state = optimizer or AdamState(learning_rate=schedule.base_lr, weight_decay=weight_decay)
    history: List[dict] = []
    best_state, best_epoch, best_metrics, best_loss = None, None, None, math.inf
    last_good = _snapshot(model)
    for epoch in range(schedule.total_epochs):
        state.learning_rate = lr_at(schedule, epoch)
        total, seen = 0.0, 0
        for x, y in batches(manifest.train, batch_size, seed=seed, mode="train", policy=policy,
                            epoch=epoch, workers=workers):
            if len(y) < 2:
                logger.debug("skipping a one-sample batch in epoch %d", epoch)
                continue
            try:
                loss = train_step(model, x, y, state)
            except NonFiniteError as exc:
                model.load_state_dict(last_good)
                raise TrainingAborted(f"epoch {epoch}: {exc}", last_good, history) from exc
            total += loss * len(y)
            seen += len(y)
        last_good = _snapshot(model)
        report = evaluate(model, manifest.val, batch_size)
        row = {"epoch": epoch, "lr": state.learning_rate,
               "train_loss": total / seen if seen else float("nan"),
               "val_loss": report.log_loss, "val_accuracy": report.accuracy,
               "val_auc": report.auc if report.auc is not None else float("nan")}
        history.append(row)
        logger.info("epoch %d lr %.2e train %.4f val %.4f acc %.4f auc %s", epoch, row["lr"],
                    row["train_loss"], row["val_loss"], row["val_accuracy"], report.auc)
        if report.log_loss < best_loss:
            best_loss = report.log_loss
            best_state, best_epoch, best_metrics = last_good, epoch, report.summary()
        if on_epoch is not None:
            on_epoch(row, model)
    return TrainResult(model, history, best_state, best_epoch, best_metrics, state)


HISTORY_FIELDS = ("epoch", "lr", "train_loss", "val_loss", "val_accuracy", "val_auc")


def write_history_csv(history: Sequence[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_FIELDS)
        for row in history:
            w.writerow([row["epoch"]] + [repr(float(row[k])) for k in HISTORY_FIELDS[1:]])


def write_roc_csv(report: MetricsReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(("threshold", "fpr", "tpr"))
        if report.fpr is not None:
            for t, f, p in zip(report.thresholds, report.fpr, report.tpr):
                w.writerow((repr(float(t)), repr(float(f)), repr(float(p))))
