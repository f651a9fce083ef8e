"""Mini-batch optimization of the squared error over observed entries.

The loss is the plain sum over the batch (half squared error per entry);
Adam with bias correction is the default optimizer, plain SGD the fallback.
Validation RMSE on the original value scale drives early stopping and the
best-checkpoint rule.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import metrics, model, ops, preprocess
from .autodiff import Tape
from .errors import ConfigError, TrainingError
from .model import ModelConfig
from .preprocess import NormalizationParams
from .sparse import DataSplit, SparseTensor

TRACE_HEADER = "epoch,loss,val_mae,val_mre,val_rmse,seconds"


@dataclass
class TrainConfig:
    lr: float = 0.01
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 10
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    loss_mean: bool = False  # optimize the batch mean instead of the sum

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if not 0 <= self.patience <= self.max_epochs:
            raise ConfigError(
                f"patience must be in [0, max_epochs], got {self.patience}"
            )
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0.0 < b < 1.0:
                raise ConfigError(f"{name} must be in (0, 1), got {b}")


@dataclass
class OptimizerState:
    """Global step counter; moment buffers live on the Parameters."""

    step: int = 0


@dataclass(frozen=True)
class TraceRow:
    epoch: int
    loss: float
    val_mae: float
    val_mre: float
    val_rmse: float
    seconds: float


class TrainTrace:
    def __init__(self):
        self.rows: list[TraceRow] = []

    def append(self, row: TraceRow):
        if self.rows and row.epoch <= self.rows[-1].epoch:
            raise ValueError("trace epochs must be strictly increasing")
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)

    def best_epoch(self) -> int:
        """Epoch with minimal validation RMSE (first on ties)."""
        best = min(self.rows, key=lambda r: (r.val_rmse, r.epoch))
        return best.epoch

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(TRACE_HEADER + "\n")
            for r in self.rows:
                fh.write(f"{r.epoch},{r.loss!r},{r.val_mae!r},{r.val_mre!r},"
                         f"{r.val_rmse!r},{r.seconds!r}\n")

    @staticmethod
    def from_csv(path) -> "TrainTrace":
        trace = TrainTrace()
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().strip()
            if header != TRACE_HEADER:
                raise ValueError(f"unexpected trace header {header!r}")
            for line in fh:
                epoch, *rest = line.strip().split(",")
                trace.append(TraceRow(int(epoch), *(float(x) for x in rest)))
        return trace


def loss(tape, kind: str, params, config: ModelConfig, idx_i, idx_j, idx_k,
         targets, training: bool = False, rng=None):
    """Half summed squared error over a batch of normalized targets."""
    targets = np.asarray(targets, dtype=np.float64)
    if targets.size == 0:
        raise ValueError("loss needs a non-empty batch")
    if targets.min() < 0 or targets.max() > 1:
        raise ValueError("loss targets must lie in [0, 1]")
    terms = []
    for i, j, k, y in zip(idx_i, idx_j, idx_k, targets):
        pred = model.forward(tape, kind, params, config, int(i), int(j), int(k),
                             training, rng)
        terms.append(ops.squared_error(tape, pred, float(y)))
    return ops.add_n(tape, terms)


def adam_step(params, state: OptimizerState, lr: float,
              betas=(0.9, 0.999), eps: float = 1e-8) -> None:
    """Bias-corrected Adam update; gradients are zeroed afterward."""
    state.step += 1
    b1, b2 = betas
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p in params:
        g = p.grad
        p.m *= b1
        p.m += (1.0 - b1) * g
        p.v *= b2
        p.v += (1.0 - b2) * (g * g)
        p.value -= lr * (p.m / c1) / (np.sqrt(p.v / c2) + eps)
        p.grad[...] = 0.0


def sgd_step(params, lr: float) -> None:
    for p in params:
        p.value -= lr * p.grad
        p.grad[...] = 0.0


def evaluate(params, kind: str, config: ModelConfig, entries: SparseTensor,
             norm: NormalizationParams) -> metrics.MetricsReport:
    """Original-scale metrics over a set of observed entries (dropout off)."""
    if len(entries) == 0:
        raise ValueError("evaluate needs a non-empty entry set")
    preds_norm = np.array([
        model.predict(kind, params, config, int(i), int(j), int(k))
        for i, j, k in zip(entries.i, entries.j, entries.k)
    ])
    preds = preprocess.inverse_transform(preds_norm, norm)
    return metrics.report(entries.values, preds)


def fit(kind: str, data: DataSplit, model_config: ModelConfig,
        train_config: TrainConfig, norm: NormalizationParams):
    """Train on data.train, early-stop on data.valid RMSE, keep best params.

    Returns (params, trace); params hold the values of the epoch with the
    lowest validation RMSE.  With an empty validation split early stopping is
    disabled and the final parameters are returned.
    """
    train = data.train
    if len(train) == 0:
        raise ValueError("fit needs a non-empty training split")
    params = model.init_params(kind, model_config, train.shape, seed=model_config.seed)
    param_list = params.parameters()
    state = OptimizerState()
    targets = preprocess.transform(train.values, norm)
    shuffle_rng = np.random.default_rng(train_config.seed)
    dropout_rng = np.random.default_rng((train_config.seed, 1))

    trace = TrainTrace()
    have_valid = len(data.valid) > 0
    best_rmse = np.inf
    best_values = None
    epochs_since_best = 0
    n = len(train)
    started = time.perf_counter()
    for epoch in range(1, train_config.max_epochs + 1):
        order = shuffle_rng.permutation(n)
        epoch_loss = 0.0
        for lo in range(0, n, train_config.batch_size):
            batch = order[lo:lo + train_config.batch_size]
            tape = Tape()
            batch_loss = loss(tape, kind, params, model_config,
                              train.i[batch], train.j[batch], train.k[batch],
                              targets[batch], training=True, rng=dropout_rng)
            value = float(batch_loss.value.reshape(()))
            if not np.isfinite(value):
                raise TrainingError(f"non-finite training loss at epoch {epoch}")
            epoch_loss += value
            grad_root = batch_loss
            if train_config.loss_mean:
                grad_root = ops.scale(tape, batch_loss, 1.0 / len(batch))
            tape.backward(grad_root)
            if train_config.optimizer == "adam":
                adam_step(param_list, state, train_config.lr,
                          (train_config.beta1, train_config.beta2), train_config.eps)
            else:
                sgd_step(param_list, train_config.lr)
        if have_valid:
            val = evaluate(params, kind, model_config, data.valid, norm)
            val_mae, val_mre, val_rmse = val.mae, val.mre, val.rmse
        else:
            val_mae = val_mre = val_rmse = float("nan")
        trace.append(TraceRow(epoch, epoch_loss, val_mae, val_mre, val_rmse,
                              time.perf_counter() - started))
        if have_valid:
            if val_rmse < best_rmse:
                best_rmse = val_rmse
                best_values = [p.value.copy() for p in param_list]
                epochs_since_best = 0
            else:
                epochs_since_best += 1
            if epochs_since_best >= train_config.patience:
                break
    if best_values is not None:
        for p, v in zip(param_list, best_values):
            p.value[...] = v
    return params, trace
