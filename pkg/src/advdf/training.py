"""Training loop: AdamW updates, per-epoch validation, best-accuracy selection."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import audio_io, metrics
from .models import Checkpoint, Detector, bce_grad, bce_loss


class TrainingDivergedError(Exception):
    """Non-finite loss; carries the epoch and batch where it appeared."""

    def __init__(self, epoch: int, batch: int):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 10
    weight_decay: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0 or self.batch_size <= 0 or self.epochs <= 0:
            raise ValueError("invalid training configuration")


class AdamW:
    """Adam with decoupled weight decay (decay rates 0.9/0.999, eps 1e-8)."""

    def __init__(self, params: dict, lr: float, weight_decay: float = 0.0,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.wd = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k, p in params.items():
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            update = (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)
            params[k] = p - self.lr * update - self.lr * self.wd * p


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    valid_accuracy: float
    valid_eer: float


@dataclass
class TrainResult:
    best: Checkpoint
    history: list[EpochRecord] = field(default_factory=list)

    @property
    def best_epoch(self) -> int:
        return self.best.epoch


def evaluate_split(detector: Detector, inputs: np.ndarray, labels: np.ndarray,
                   chunk: int = 128) -> tuple[float, float, np.ndarray]:
    """(accuracy, EER, logits) on prepared model inputs."""
    logits = np.concatenate([detector.model.forward(inputs[i: i + chunk])
                             for i in range(0, inputs.shape[0], chunk)])
    acc = metrics.accuracy(logits, labels)
    eer = metrics.compute_eer(logits[labels == 0], logits[labels == 1])
    return acc, eer, logits


def train(detector: Detector, records, cfg: TrainConfig,
          config_digest: str = "") -> TrainResult:
    """Train on the manifest's train split, validate per epoch, and keep the
    checkpoint with the highest validation accuracy (earlier epoch on ties)."""
    train_recs = audio_io.split_records(records, "train")
    valid_recs = audio_io.split_records(records, "valid")
    if not train_recs or not valid_recs:
        raise audio_io.ManifestError("training requires non-empty train and valid splits")

    waves, y_train = audio_io.load_split_waves(train_recs)
    x_train = detector.prepare(waves)
    del waves
    waves, y_valid = audio_io.load_split_waves(valid_recs)
    x_valid = detector.prepare(waves)
    del waves

    model = detector.model
    opt = AdamW(model.params, cfg.learning_rate, cfg.weight_decay)
    n = x_train.shape[0]
    history = []
    best = None
    best_acc = -1.0

    for epoch in range(1, cfg.epochs + 1):
        rng = np.random.default_rng([cfg.seed, epoch])
        perm = rng.permutation(n)
        epoch_losses = []
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = perm[start: start + cfg.batch_size]
            loss, grads = detector.loss_param_grads(x_train[idx], y_train[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch, b)
            opt.step(model.params, grads)
            epoch_losses.append(loss)
        acc, eer, _ = evaluate_split(detector, x_valid, y_valid)
        history.append(EpochRecord(epoch, float(np.mean(epoch_losses)), acc, eer))
        if acc > best_acc:
            best_acc = acc
            best = Checkpoint(kind=detector.name, params=model.param_vector(),
                              epoch=epoch, seed=cfg.seed, config_digest=config_digest)

    model.set_param_vector(best.params)
    return TrainResult(best=best, history=history)
