"""Loss-adaptive adversarial fine-tuning.

A sampling vector w over {no-attack, attack_1..attack_N} decides per batch
whether (and how) the batch is attacked before the optimizer step. After each
step the drawn entry is pulled toward the clipped batch loss and the whole
vector is renormalized against fixed anchor proportions, so no single
(non-)attack can starve the others. Checkpoint selection balances the N+1
per-scenario validation accuracies through their product/sum ratio.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import audio_io, metrics
from .attacks import AttackSpec, attack_batch
from .models import Checkpoint, Detector, bce_loss
from .training import AdamW, TrainConfig, TrainingDivergedError


class AdversarialTrainingAborted(Exception):
    """Too many attacked batches fell back to clean data."""


@dataclass(frozen=True)
class AdaptiveConfig:
    roster: tuple[AttackSpec, ...]
    clip_value: float = 1.0
    momentum: float = 0.2
    non_attack_proportion: float = 1.0 / 3.0
    epochs: int = 10

    def __post_init__(self):
        object.__setattr__(self, "roster", tuple(self.roster))
        if len(self.roster) < 1:
            raise ValueError("roster must contain at least one attack")
        if not 0.0 < self.momentum <= 1.0:
            raise ValueError("momentum must lie in (0, 1]")
        if not 0.0 < self.non_attack_proportion < 1.0:
            raise ValueError("non-attack proportion must lie in (0, 1)")
        if self.clip_value <= 0 or self.epochs < 1:
            raise ValueError("invalid adaptive configuration")

    @property
    def n_attacks(self) -> int:
        return len(self.roster)


def uniform_sampling_vector(n_attacks: int) -> np.ndarray:
    return np.full(n_attacks + 1, 1.0 / (n_attacks + 1))


def adaptive_update(w: np.ndarray, loss_i: float, i: int,
                    cfg: AdaptiveConfig) -> np.ndarray:
    """One sampling-vector update.

    w_i <- m * min(loss_i, c) + (1 - m) * w_i, then every entry is averaged
    half/half between its normalized value and its anchor proportion
    (p for index 0, (1 - p) / N otherwise), which keeps the sum at exactly 1
    and every entry above half its anchor.
    """
    w = np.asarray(w, dtype=np.float64)
    n = cfg.n_attacks
    if w.shape != (n + 1,):
        raise ValueError(f"sampling vector must have {n + 1} entries")
    if not 0 <= i <= n:
        raise IndexError(f"(non-)attack index {i} out of range 0..{n}")
    if not np.isfinite(loss_i) or loss_i < 0:
        raise ValueError(f"loss must be finite and non-negative, got {loss_i}")
    out = w.copy()
    out[i] = cfg.momentum * min(loss_i, cfg.clip_value) + (1.0 - cfg.momentum) * out[i]
    s = out.sum()
    anchors = np.full(n + 1, (1.0 - cfg.non_attack_proportion) / n)
    anchors[0] = cfg.non_attack_proportion
    out = 0.5 * out / s + 0.5 * anchors
    return out


def sample_index(w: np.ndarray, rng: np.random.Generator) -> int:
    """Categorical draw over the N+1 sampling probabilities."""
    return int(rng.choice(len(w), p=np.asarray(w) / np.sum(w)))


def epoch_score(a) -> float:
    """(N+1) * prod(a) / sum(a); zero whenever any accuracy is zero."""
    a = np.asarray(a, dtype=np.float64)
    if np.any((a < 0) | (a > 1)):
        raise ValueError("accuracies must lie in [0, 1]")
    total = a.sum()
    if total == 0.0 or np.any(a == 0.0):
        return 0.0
    return float(len(a) * np.prod(a) / total)


@dataclass
class AdaptiveEpochRecord:
    epoch: int
    w_snapshot: np.ndarray
    accuracies: np.ndarray  # length N+1: clean first, then roster order
    clean_eer: float
    attacked_eers: np.ndarray
    score: float
    params: np.ndarray | None = None

    def to_json(self) -> str:
        return json.dumps({
            "epoch": self.epoch,
            "w_snapshot": [float(v) for v in self.w_snapshot],
            "accuracies": [float(v) for v in self.accuracies],
            "clean_eer": self.clean_eer,
            "attacked_eers": [float(v) for v in self.attacked_eers],
            "score": self.score,
        }, sort_keys=True)


def select_epoch(history: list[AdaptiveEpochRecord]) -> int:
    """Epoch number maximizing the score; earlier epoch wins ties."""
    if not history:
        raise ValueError("cannot select an epoch from empty history")
    best = max(range(len(history)), key=lambda k: (history[k].score, -k))
    return history[best].epoch


def history_to_jsonl(history, selected_epoch: int) -> str:
    lines = [rec.to_json() for rec in history]
    lines.append(json.dumps({"selected_epoch": selected_epoch}, sort_keys=True))
    return "\n".join(lines) + "\n"


def _scenario_eval(detector: Detector, waves: np.ndarray, labels: np.ndarray,
                   spec: AttackSpec | None, clean_inputs: np.ndarray,
                   batch_size: int) -> tuple[float, float]:
    """(accuracy, EER) under one (non-)attack scenario, white-box vs the
    current model."""
    if spec is None or spec.kind == "none":
        logits = np.concatenate(
            [detector.model.forward(clean_inputs[j: j + batch_size])
             for j in range(0, clean_inputs.shape[0], batch_size)])
    else:
        chunks = []
        for j in range(0, waves.shape[0], batch_size):
            adv, _, _ = attack_batch(detector, spec, waves[j: j + batch_size],
                                     labels[j: j + batch_size])
            chunks.append(detector.logits(adv))
        logits = np.concatenate(chunks)
    acc = metrics.accuracy(logits, labels.astype(np.int64))
    eer = metrics.compute_eer(logits[labels == 0], logits[labels == 1])
    return acc, eer


def adv_finetune(detector: Detector, records, cfg: AdaptiveConfig,
                 train_cfg: TrainConfig, config_digest: str = "",
                 max_fallback_fraction: float = 0.01):
    """Fine-tune a trained detector with adaptively sampled attacks.

    Per batch: draw i ~ w; for i > 0 replace the whole batch with roster
    attack i crafted against the current model; take an AdamW step; feed the
    post-step batch loss back into the sampling-vector update. Per epoch:
    validate accuracy and EER under every (non-)attack scenario. Returns the
    checkpoint of the score-selected epoch plus the epoch history.

    Attack failures fall back to the clean batch; the run aborts when more
    than `max_fallback_fraction` of batches fell back.
    """
    train_recs = audio_io.split_records(records, "train")
    valid_recs = audio_io.split_records(records, "valid")
    if not train_recs or not valid_recs:
        raise audio_io.ManifestError("fine-tuning requires train and valid splits")

    train_waves, y_train = audio_io.load_split_waves(train_recs)
    x_train_clean = detector.prepare(train_waves)
    valid_waves, y_valid = audio_io.load_split_waves(valid_recs)
    x_valid_clean = detector.prepare(valid_waves)

    model = detector.model
    opt = AdamW(model.params, train_cfg.learning_rate, train_cfg.weight_decay)
    w = uniform_sampling_vector(cfg.n_attacks)
    rng = np.random.default_rng([train_cfg.seed, 777])
    n = train_waves.shape[0]
    bs = train_cfg.batch_size
    history: list[AdaptiveEpochRecord] = []
    planned_batches = cfg.epochs * (-(-n // bs))
    n_fallbacks = 0

    for epoch in range(1, cfg.epochs + 1):
        perm = np.random.default_rng([train_cfg.seed, epoch]).permutation(n)
        for b, start in enumerate(range(0, n, bs)):
            idx = perm[start: start + bs]
            labels = y_train[idx]
            i = sample_index(w, rng)
            if i == 0:
                x_batch = x_train_clean[idx]
            else:
                try:
                    adv, _, errors = attack_batch(detector, cfg.roster[i - 1],
                                                  train_waves[idx], labels)
                    if any(e is not None for e in errors):
                        raise RuntimeError("per-sample attack failure")
                    x_batch = detector.prepare(adv)
                except Exception:
                    n_fallbacks += 1
                    if n_fallbacks > max_fallback_fraction * planned_batches:
                        raise AdversarialTrainingAborted(
                            f"{n_fallbacks} attacked batches fell back to clean data")
                    x_batch = x_train_clean[idx]
            loss, grads = detector.loss_param_grads(x_batch, labels)
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch, b)
            opt.step(model.params, grads)
            # Algorithm feedback: post-step loss on the same batch
            post_loss = float(bce_loss(model.forward(x_batch), labels).mean())
            w = adaptive_update(w, post_loss, i, cfg)

        accs = np.zeros(cfg.n_attacks + 1)
        eers = np.zeros(cfg.n_attacks + 1)
        accs[0], eers[0] = _scenario_eval(detector, valid_waves, y_valid, None,
                                          x_valid_clean, bs)
        for k, spec in enumerate(cfg.roster, start=1):
            accs[k], eers[k] = _scenario_eval(detector, valid_waves, y_valid, spec,
                                              x_valid_clean, bs)
        history.append(AdaptiveEpochRecord(
            epoch=epoch, w_snapshot=w.copy(), accuracies=accs,
            clean_eer=float(eers[0]), attacked_eers=eers[1:].copy(),
            score=epoch_score(accs), params=model.param_vector()))

    chosen = select_epoch(history)
    chosen_rec = next(r for r in history if r.epoch == chosen)
    model.set_param_vector(chosen_rec.params)
    ckpt = Checkpoint(kind=detector.name, params=chosen_rec.params.copy(),
                      epoch=chosen, seed=train_cfg.seed, config_digest=config_digest)
    return ckpt, history
