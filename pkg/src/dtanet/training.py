"""Mini-batch training with early stopping on a composite validation score.

The score minimized is mean(RMSE) - mean(CI) over the validation tasks: the
RMSE mean runs over tasks with at least one record and the CI mean over tasks
with at least one comparable pair, each task counted once. When no task has a
comparable pair the score falls back to the RMSE term alone (logged and
flagged). A perfect predictor therefore scores 0 - 1 = -1.

Training keeps the checkpoint with the lowest score seen, evaluates every
``eval_every`` epochs, and stops after ``patience`` consecutive evaluations
without improvement. The last partial batch of an epoch is kept (batch
normalization simply sees its actual size). Identical seeds give identical
histories and identical parameters.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .engine import Adam
from .metrics import MetricError, concordance_index, rmse
from .model import FeatureStore, Model, ModelConfig

__all__ = ["TrainConfig", "TrainingError", "EpochRow", "TrainResult",
           "composite_score", "validation_scores", "train",
           "epoch_cost_probe"]

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 5
    learning_rate: float = 1e-3
    seed: int = 0
    eval_every: int = 1

    def validated(self) -> "TrainConfig":
        if self.batch_size < 1:
            raise TrainingError("batch_size must be >= 1")
        if self.patience < 1:
            raise TrainingError("patience must be >= 1")
        if self.max_epochs < 1:
            raise TrainingError("max_epochs must be >= 1")
        if self.eval_every < 1:
            raise TrainingError("eval_every must be >= 1")
        return self


@dataclass
class EpochRow:
    epoch: int
    train_loss: float
    val_rmse: tuple[float | None, ...] | None = None  # per task
    val_ci: tuple[float | None, ...] | None = None    # per task
    composite: float | None = None
    ci_fallback: bool = False


@dataclass
class TrainResult:
    history: list[EpochRow]
    best_epoch: int
    best_score: float
    best_state: dict[str, np.ndarray]
    best_optimizer: dict[str, np.ndarray]
    best_optimizer_step: int
    evals_performed: int
    epoch_seconds: list[float] = field(default_factory=list)


def composite_score(task_rmse, task_ci) -> tuple[float, bool]:
    """mean(RMSE) - mean(CI); falls back to the RMSE term when no CI exists."""
    rmses = [v for v in task_rmse if v is not None]
    if not rmses:
        raise TrainingError("no validation task has any record")
    cis = [v for v in task_ci if v is not None]
    if not cis:
        return float(np.mean(rmses)), True
    return float(np.mean(rmses)) - float(np.mean(cis)), False


def validation_scores(model: Model, store: FeatureStore,
                      val_idx: np.ndarray, batch_size: int = 256):
    """Per-task RMSE and CI on the validation pairs, plus the composite."""
    predicted = store.predict(model, val_idx, batch_size=batch_size)
    y, w = store.pair_targets(val_idx)
    task_rmse: list[float | None] = []
    task_ci: list[float | None] = []
    for t in range(y.shape[1]):
        mask = w[:, t] > 0
        if not mask.any():
            task_rmse.append(None)
            task_ci.append(None)
            continue
        task_rmse.append(rmse(y[mask, t], predicted[mask, t]))
        try:
            task_ci.append(concordance_index(y[mask, t], predicted[mask, t]))
        except MetricError:
            task_ci.append(None)
    score, fallback = composite_score(task_rmse, task_ci)
    if fallback:
        log.warning("validation has no comparable pairs for CI; "
                    "early-stopping score falls back to RMSE alone")
    return tuple(task_rmse), tuple(task_ci), score, fallback


def _run_epoch(model: Model, store: FeatureStore, order: np.ndarray,
               adam: Adam, batch_size: int,
               rng: np.random.Generator) -> float:
    graph = model.graph
    total = 0.0
    for start in range(0, order.size, batch_size):
        batch = order[start:start + batch_size]
        feeds = store.feeds(batch, with_targets=True, model=model)
        (loss_value,) = graph.forward(feeds, [model.loss], training=True,
                                      rng=rng)
        graph.backward(model.loss)
        adam.step()
        graph.zero_grad()
        total += float(loss_value) * batch.size
    return total / order.size


def train(model: Model, store: FeatureStore, train_idx, val_idx,
          cfg: TrainConfig) -> TrainResult:
    """Train ``model`` in place and leave it holding the best parameters."""
    cfg = cfg.validated()
    train_idx = np.asarray(train_idx, dtype=np.int64)
    val_idx = np.asarray(val_idx, dtype=np.int64)
    if train_idx.size == 0:
        raise TrainingError("empty training set")
    if np.intersect1d(train_idx, val_idx).size:
        raise TrainingError("training and validation sets overlap")
    adam = Adam(model.graph.parameters(), learning_rate=cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    history: list[EpochRow] = []
    best_score = np.inf
    best_epoch = 0
    best_state: dict[str, np.ndarray] | None = None
    best_optimizer: dict[str, np.ndarray] | None = None
    best_step = 0
    strikes = 0
    evals = 0
    epoch_seconds: list[float] = []
    for epoch in range(1, cfg.max_epochs + 1):
        started = time.perf_counter()
        order = rng.permutation(train_idx)
        train_loss = _run_epoch(model, store, order, adam, cfg.batch_size, rng)
        epoch_seconds.append(time.perf_counter() - started)
        row = EpochRow(epoch=epoch, train_loss=train_loss)
        if epoch % cfg.eval_every == 0 and val_idx.size:
            task_rmse, task_ci, score, fallback = validation_scores(
                model, store, val_idx)
            evals += 1
            row.val_rmse = task_rmse
            row.val_ci = task_ci
            row.composite = score
            row.ci_fallback = fallback
            if score < best_score:
                best_score = score
                best_epoch = epoch
                best_state = model.graph.state_dict()
                best_optimizer = adam.state_arrays()
                best_step = adam.state.step
                strikes = 0
            else:
                strikes += 1
            history.append(row)
            if strikes >= cfg.patience:
                break
        else:
            history.append(row)
    if best_state is None:
        # nothing was evaluated (e.g. no validation set): keep the final state
        best_state = model.graph.state_dict()
        best_optimizer = adam.state_arrays()
        best_step = adam.state.step
        best_epoch = history[-1].epoch if history else 0
        best_score = float("nan")
    model.graph.load_state(best_state)
    return TrainResult(history=history, best_epoch=best_epoch,
                       best_score=float(best_score), best_state=best_state,
                       best_optimizer=best_optimizer,
                       best_optimizer_step=best_step,
                       evals_performed=evals, epoch_seconds=epoch_seconds)


def history_rows(result: TrainResult) -> list[str]:
    """CSV lines ``epoch,train_loss,val_rmse,val_ci,composite``."""
    lines = ["epoch,train_loss,val_rmse,val_ci,composite"]
    for row in result.history:
        if row.composite is None:
            lines.append(f"{row.epoch},{row.train_loss:.10g},,,")
            continue
        rmses = [v for v in row.val_rmse if v is not None]
        cis = [v for v in (row.val_ci or ()) if v is not None]
        mean_rmse = f"{np.mean(rmses):.10g}" if rmses else ""
        mean_ci = f"{np.mean(cis):.10g}" if cis else ""
        lines.append(f"{row.epoch},{row.train_loss:.10g},{mean_rmse},"
                     f"{mean_ci},{row.composite:.10g}")
    return lines


def epoch_cost_probe(n_pairs: int, seed: int = 0, batch_size: int = 128,
                     timed_epochs: int = 5) -> float:
    """Wall-clock seconds per training epoch on synthetic pairs.

    Builds a fixed small paired-input model over ``n_pairs`` synthetic
    records (features drawn directly, featurization excluded from the
    timing), runs one warm-up epoch and returns the minimum over the timed
    epochs; the minimum is the repeat least contaminated by scheduler noise.
    Cost per epoch should scale with the pair count alone.
    """
    if n_pairs < 1:
        raise TrainingError("empty training set")
    from . import synthetic  # local import: synthetic depends on this module's peers

    dataset = synthetic.memory_dataset(
        n_compounds=max(8, n_pairs // 50), n_proteins=8, n_pairs=n_pairs,
        seed=seed)
    cfg = ModelConfig(variant="padme-ecfp", hidden_layers=(64,),
                      dropout_rates=(0.0,), fp_bits=512, seed=seed)
    store = FeatureStore(dataset, cfg)
    model = store.build_model()
    adam = Adam(model.graph.parameters(), learning_rate=1e-3)
    rng = np.random.default_rng(seed)
    indices = np.arange(dataset.n_pairs, dtype=np.int64)
    times = []
    for epoch in range(timed_epochs + 1):
        order = rng.permutation(indices)
        started = time.perf_counter()
        _run_epoch(model, store, order, adam, batch_size, rng)
        elapsed = time.perf_counter() - started
        if epoch > 0:  # first epoch is warm-up
            times.append(elapsed)
    return float(min(times))
