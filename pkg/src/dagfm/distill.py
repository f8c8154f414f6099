"""Three-stage teacher→student training pipeline.

Stage 1 trains a teacher on the CTR objective alone. Stage 2 copies the
teacher's embedding tables into the student, freezes them (and never touches
the teacher), and trains the remaining student parameters against
``alpha * kd + beta * ctr``. Stage 3 unfreezes everything and fine-tunes the
student on the CTR objective.

Knowledge matching happens in logit space by default — mean squared error on
pre-sigmoid outputs — because probability-space MSE saturates through the
sigmoid; ``kd_space="probability"`` switches it.

Each stage writes one JSON line per epoch: {"epoch", "loss", "val_auc",
"val_logloss"} with sorted keys and no timestamps, so a seeded rerun
produces byte-identical logs.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, DatasetSplit, iterate_batches
from .metrics import auc as auc_metric
from .metrics import logloss as logloss_metric
from .numcore import (
    ConfigurationError,
    TrainingDivergenceError,
    adam_step,
    stable_sigmoid,
)

CTR_CLIP = 1e-7
THREADS_ENV = "DAGFM_THREADS"


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def kd_loss(teacher_logits, student_logits) -> float:
    """Mean squared difference between teacher and student outputs."""
    t = np.asarray(teacher_logits, dtype=np.float64)
    s = np.asarray(student_logits, dtype=np.float64)
    if t.shape != s.shape or t.ndim != 1 or t.size < 1:
        raise ConfigurationError(
            f"teacher {t.shape} and student {s.shape} outputs must be equal-length vectors"
        )
    return float(np.mean((t - s) ** 2))


def ctr_loss(labels, probs) -> float:
    """Mean binary cross entropy; probabilities clipped to [1e-7, 1 - 1e-7]."""
    y = np.asarray(labels, dtype=np.float64)
    p = np.asarray(probs, dtype=np.float64)
    if y.shape != p.shape or y.ndim != 1 or y.size < 1:
        raise ConfigurationError(
            f"labels {y.shape} and probabilities {p.shape} must be equal-length vectors"
        )
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ConfigurationError("labels must be 0 or 1")
    p = np.clip(p, CTR_CLIP, 1.0 - CTR_CLIP)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def total_loss(kd: float, ctr: float, alpha: float, beta: float) -> float:
    """Weighted stage-2 objective ``alpha * kd + beta * ctr``."""
    if alpha < 0 or beta < 0:
        raise ConfigurationError(f"weights must be nonnegative, got alpha={alpha}, beta={beta}")
    return alpha * kd + beta * ctr


def _ctr_loss_and_grad(labels, logits) -> tuple[float, np.ndarray]:
    """CTR loss from logits plus its exact gradient (zero where the
    probability clip is active, so finite differences agree)."""
    y = np.asarray(labels, dtype=np.float64)
    p = stable_sigmoid(logits)
    loss = ctr_loss(y, p)
    inside = (p > CTR_CLIP) & (p < 1.0 - CTR_CLIP)
    dlogits = np.where(inside, (p - y), 0.0) / y.size
    return loss, dlogits


def _kd_loss_and_grad(teacher_logits, student_logits, space: str) -> tuple[float, np.ndarray]:
    t = np.asarray(teacher_logits, dtype=np.float64)
    s = np.asarray(student_logits, dtype=np.float64)
    if space == "logit":
        loss = kd_loss(t, s)
        dlogits = 2.0 * (s - t) / s.size
        return loss, dlogits
    if space == "probability":
        pt, ps = stable_sigmoid(t), stable_sigmoid(s)
        loss = kd_loss(pt, ps)
        dlogits = 2.0 * (ps - pt) * ps * (1.0 - ps) / s.size
        return loss, dlogits
    raise ConfigurationError(f"unknown kd space {space!r}; pick 'logit' or 'probability'")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StageConfig:
    """One training stage. ``patience`` is the number of epochs without a
    validation-AUC improvement before stopping early (0 disables early
    stopping); ``weight_decay`` is a classic L2 term added to gradients."""

    epochs: int
    lr: float
    batch_size: int = 1024
    patience: int = 3
    weight_decay: float = 0.0
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigurationError(f"epochs must be >= 0, got {self.epochs}")
        if self.lr < 0:
            raise ConfigurationError(f"lr must be >= 0, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.patience < 0:
            raise ConfigurationError(f"patience must be >= 0, got {self.patience}")
        if self.weight_decay < 0:
            raise ConfigurationError(f"weight_decay must be >= 0, got {self.weight_decay}")


@dataclass(frozen=True)
class DistillPlan:
    """Weights and per-stage settings of the full pipeline."""

    teacher_stage: StageConfig
    distill_stage: StageConfig
    finetune_stage: StageConfig
    alpha: float = 1.0
    beta: float = 0.0
    kd_space: str = "logit"

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ConfigurationError(
                f"weights must be nonnegative, got alpha={self.alpha}, beta={self.beta}"
            )
        if self.alpha == 0 and self.beta == 0:
            raise ConfigurationError("alpha and beta cannot both be zero")
        if self.kd_space not in ("logit", "probability"):
            raise ConfigurationError(f"unknown kd space {self.kd_space!r}")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss: float
    val_auc: float
    val_logloss: float

    def as_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "loss": self.loss,
            "val_auc": self.val_auc,
            "val_logloss": self.val_logloss,
        }


@dataclass
class TrainReport:
    stage: str
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_auc: float = float("nan")
    wall_time_s: float = 0.0
    checkpoint_path: str | None = None


# ---------------------------------------------------------------------------
# prediction / evaluation (optionally sharded across threads)
# ---------------------------------------------------------------------------

def _num_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError as e:
        raise ConfigurationError(f"{THREADS_ENV}={raw!r} is not an integer") from e
    return max(1, n)


def predict_logits(model, indices: np.ndarray, batch_size: int = 4096) -> np.ndarray:
    """Forward passes over row batches, concatenated in input order.

    With ``DAGFM_THREADS > 1`` the batches are sharded across a thread pool;
    shards are reduced in index order, so the result is identical to the
    single-threaded pass.
    """
    indices = np.asarray(indices)
    spans = [
        (start, min(start + batch_size, len(indices)))
        for start in range(0, len(indices), batch_size)
    ]
    if not spans:
        return np.zeros(0)
    threads = _num_threads()
    if threads == 1 or len(spans) == 1:
        chunks = [model.forward(indices[a:b]) for a, b in spans]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(lambda ab: model.forward(indices[ab[0] : ab[1]]), spans))
    return np.concatenate(chunks)


@dataclass(frozen=True)
class EvalResult:
    auc: float
    logloss: float
    n: int


def evaluate(model, dataset: Dataset, batch_size: int = 4096) -> EvalResult:
    logits = predict_logits(model, dataset.indices, batch_size=batch_size)
    probs = stable_sigmoid(logits)
    return EvalResult(
        auc=auc_metric(dataset.labels, probs),
        logloss=logloss_metric(dataset.labels, probs),
        n=len(dataset),
    )


# ---------------------------------------------------------------------------
# the stage runner
# ---------------------------------------------------------------------------

def _run_stage(
    model,
    split: DatasetSplit,
    stage: StageConfig,
    batch_loss_fn,
    stage_name: str,
    log_path=None,
    restore_best: bool = True,
) -> TrainReport:
    """Epoch loop shared by all three stages.

    ``batch_loss_fn(logits, labels, rows) -> (loss, dlogits)`` defines the
    objective; ``rows`` are the original train-set positions of the batch.
    With ``restore_best`` the incoming parameter state counts as epoch 0,
    so the restored best state can never have a worse validation AUC than
    the input model.  ``restore_best=False`` keeps the final epoch's state
    (the report still records the argmax-validation-AUC epoch); this is
    what the distillation stage uses, where the objective is matching the
    teacher rather than maximising validation AUC.
    """
    t0 = time.perf_counter()
    report = TrainReport(stage=stage_name)
    start = evaluate(model, split.val)
    best_auc, best_epoch = start.auc, 0
    best_snap = model.store.snapshot() if restore_best else None
    n_train = len(split.train)
    log = open(log_path, "w") if log_path is not None else None
    try:
        for epoch in range(1, stage.epochs + 1):
            total = 0.0
            for rows, idx, labels in iterate_batches(
                split.train,
                stage.batch_size,
                seed=stage.shuffle_seed + epoch,
                with_positions=True,
            ):
                logits = model.forward(idx)
                loss, dlogits = batch_loss_fn(logits, labels, rows)
                if not np.isfinite(loss):
                    report.wall_time_s = time.perf_counter() - t0
                    err = TrainingDivergenceError(
                        f"{stage_name}: non-finite loss at epoch {epoch}"
                    )
                    err.report = report
                    raise err
                grads = model.backward(dlogits)
                adam_step(model.store, grads, stage.lr, weight_decay=stage.weight_decay)
                total += loss * len(labels)
            val = evaluate(model, split.val)
            record = EpochRecord(epoch, total / n_train, val.auc, val.logloss)
            report.epochs.append(record)
            if log is not None:
                log.write(json.dumps(record.as_dict(), sort_keys=True) + "\n")
                log.flush()
            if val.auc > best_auc:
                best_auc, best_epoch = val.auc, epoch
                if restore_best:
                    best_snap = model.store.snapshot()
            elif epoch - best_epoch >= stage.patience > 0:
                break
    finally:
        if log is not None:
            log.close()
    if restore_best:
        model.store.restore(best_snap)
    report.best_epoch = best_epoch
    report.best_val_auc = best_auc
    report.wall_time_s = time.perf_counter() - t0
    return report


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def train_teacher(
    model, split: DatasetSplit, stage: StageConfig, log_path=None
) -> TrainReport:
    """Stage 1: CTR objective only, every parameter trainable."""

    def batch_loss(logits, labels, rows):
        return _ctr_loss_and_grad(labels, logits)

    return _run_stage(model, split, stage, batch_loss, "teacher", log_path)


def _check_embedding_match(student, teacher) -> None:
    s_names, t_names = student.embedding_names(), teacher.embedding_names()
    if len(s_names) != len(t_names):
        raise ConfigurationError(
            f"student has {len(s_names)} embedding tables, teacher {len(t_names)}"
        )
    for sn, tn in zip(s_names, t_names):
        s_shape, t_shape = student.store[sn].shape, teacher.store[tn].shape
        if s_shape != t_shape:
            raise ConfigurationError(
                f"embedding shape mismatch: student {sn} {s_shape} vs teacher {tn} {t_shape}"
            )


def distill_student(
    student,
    teacher,
    split: DatasetSplit,
    stage: StageConfig,
    alpha: float = 1.0,
    beta: float = 0.0,
    kd_space: str = "logit",
    log_path=None,
) -> TrainReport:
    """Stage 2: copy the teacher's embeddings into the student, freeze them,
    and train the rest against the weighted KD + CTR objective.

    The teacher is never updated; its train-set logits are computed once up
    front, which also guarantees they are constant across epochs.

    Unlike the other two stages this one keeps the final epoch's parameters
    instead of rewinding to the best-validation-AUC epoch: validation AUC
    saturates long before the student's outputs have converged onto the
    teacher's, and rewinding would discard most of that matching progress.
    """
    if alpha < 0 or beta < 0 or (alpha == 0 and beta == 0):
        raise ConfigurationError(
            f"need alpha >= 0, beta >= 0, not both zero; got alpha={alpha}, beta={beta}"
        )
    _check_embedding_match(student, teacher)
    for sn, tn in zip(student.embedding_names(), teacher.embedding_names()):
        student.store.set(sn, teacher.store[tn])
    student.store.freeze(*student.embedding_names())
    teacher_logits = predict_logits(teacher, split.train.indices)

    def batch_loss(logits, labels, rows):
        kd, dkd = _kd_loss_and_grad(teacher_logits[rows], logits, kd_space)
        if beta == 0.0:
            return alpha * kd, alpha * dkd
        ctr, dctr = _ctr_loss_and_grad(labels, logits)
        return total_loss(kd, ctr, alpha, beta), alpha * dkd + beta * dctr

    return _run_stage(
        student, split, stage, batch_loss, "distill", log_path, restore_best=False
    )


def finetune_student(
    student, split: DatasetSplit, stage: StageConfig, log_path=None
) -> TrainReport:
    """Stage 3: everything unfrozen, CTR objective only."""
    student.store.unfreeze_all()

    def batch_loss(logits, labels, rows):
        return _ctr_loss_and_grad(labels, logits)

    return _run_stage(student, split, stage, batch_loss, "finetune", log_path)


@dataclass
class PipelineResult:
    teacher: TrainReport
    distill: TrainReport
    finetune: TrainReport


def run_pipeline(
    teacher,
    student,
    split: DatasetSplit,
    plan: DistillPlan,
    log_dir=None,
) -> PipelineResult:
    """All three stages back to back, logging one JSONL file per stage."""
    paths = {}
    if log_dir is not None:
        log_dir = Path(log_dir)
        log_dir.mkdir(parents=True, exist_ok=True)
        for name in ("teacher", "distill", "finetune"):
            paths[name] = log_dir / f"{name}_epochs.jsonl"
    t_report = train_teacher(teacher, split, plan.teacher_stage, paths.get("teacher"))
    d_report = distill_student(
        student,
        teacher,
        split,
        plan.distill_stage,
        alpha=plan.alpha,
        beta=plan.beta,
        kd_space=plan.kd_space,
        log_path=paths.get("distill"),
    )
    f_report = finetune_student(student, split, plan.finetune_stage, paths.get("finetune"))
    return PipelineResult(t_report, d_report, f_report)
