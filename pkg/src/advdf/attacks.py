"""Waveform-space adversarial attacks: FGSM, PGD-L2, and binary FAB.

All attacks run against a gradient Detector (white-box with respect to that
detector) and clamp the result to [-1, 1]. Batched variants vectorize the
per-sample recursions; the AttackSpec grid mirrors the benchmark parameters
(FGSM eps in {0.0005, 0.00075, 0.001}, PGD-L2 eps in {0.1, 0.15, 0.2} with
10 steps, FAB eta in {10, 20, 30}).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import audio_io
from .models import Detector

FGSM_EPSILONS = (0.0005, 0.00075, 0.001)
PGDL2_EPSILONS = (0.1, 0.15, 0.2)
FAB_ETAS = (10.0, 20.0, 30.0)

FAB_ALPHA_MAX = 0.1
FAB_BETA = 0.9
_GRAD_EPS = 1e-12


class ZeroGradientError(Exception):
    """FAB cannot project: the logit gradient is numerically zero."""


class NonFiniteGradientError(Exception):
    """An attack encountered a non-finite loss gradient."""


@dataclass(frozen=True)
class AttackSpec:
    """Attack kind plus its norm budget / step parameters."""

    kind: str  # none | fgsm | pgdl2 | fab
    epsilon: float | None = None
    eta: float | None = None
    steps: int | None = None

    def __post_init__(self):
        if self.kind not in ("none", "fgsm", "pgdl2", "fab"):
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if self.kind == "fgsm":
            if self.epsilon is None or self.epsilon < 0:
                raise ValueError("fgsm requires epsilon >= 0")
        elif self.kind == "pgdl2":
            if self.epsilon is None or self.epsilon <= 0:
                raise ValueError("pgdl2 requires epsilon > 0")
            object.__setattr__(self, "steps", self.steps or 10)
        elif self.kind == "fab":
            if self.eta is None or self.eta < 0:
                raise ValueError("fab requires eta >= 0")
            object.__setattr__(self, "steps", self.steps or 10)

    @property
    def param_value(self) -> float:
        if self.kind == "fab":
            return float(self.eta)
        if self.kind == "none":
            return 0.0
        return float(self.epsilon)

    @property
    def label(self) -> str:
        if self.kind == "none":
            return "none"
        if self.kind == "fab":
            return f"fab(eta={self.eta:g})"
        return f"{self.kind}(eps={self.epsilon:g})"


def paper_attack_grid() -> list[AttackSpec]:
    """The nine benchmark settings, strongest parameter last per kind."""
    grid = [AttackSpec("fgsm", epsilon=e) for e in FGSM_EPSILONS]
    grid += [AttackSpec("pgdl2", epsilon=e) for e in PGDL2_EPSILONS]
    grid += [AttackSpec("fab", eta=e) for e in FAB_ETAS]
    return grid


def strongest_roster() -> list[AttackSpec]:
    """One attack per kind at its strongest grid parameter."""
    return [AttackSpec("fgsm", epsilon=FGSM_EPSILONS[-1]),
            AttackSpec("pgdl2", epsilon=PGDL2_EPSILONS[-1]),
            AttackSpec("fab", eta=FAB_ETAS[-1])]


@dataclass
class AttackOutcome:
    """One attacked sample: the waveform, its distortion, and bookkeeping."""

    adversarial: np.ndarray
    linf_delta: float
    l2_delta: float
    flipped: bool
    error: str | None = None
    history: list[float] | None = None


def _check_finite(g):
    if not np.all(np.isfinite(g)):
        raise NonFiniteGradientError("non-finite input gradient")


def fgsm_batch(detector: Detector, waves: np.ndarray, labels: np.ndarray,
               epsilon: float) -> np.ndarray:
    """x' = clamp(x + eps * sign(grad_x loss), -1, 1); sign(0) = 0."""
    waves = np.atleast_2d(np.asarray(waves, dtype=np.float64))
    if epsilon == 0.0:
        return waves.copy()
    _, g = detector.loss_input_grads(waves, labels)
    _check_finite(g)
    return np.clip(waves + epsilon * np.sign(g), -1.0, 1.0)


def pgd_l2_batch(detector: Detector, waves: np.ndarray, labels: np.ndarray,
                 epsilon: float, steps: int = 10,
                 step_size: float | None = None) -> np.ndarray:
    """Normalized gradient ascent projected onto the L2 ball of radius eps.

    Starts from the clean point (no random start); the step size defaults to
    2.5 * eps / steps.
    """
    x0 = np.atleast_2d(np.asarray(waves, dtype=np.float64))
    alpha = 2.5 * epsilon / steps if step_size is None else step_size
    x = x0.copy()
    for _ in range(steps):
        _, g = detector.loss_input_grads(x, labels)
        _check_finite(g)
        norms = np.linalg.norm(g, axis=1, keepdims=True)
        x = x + alpha * g / np.maximum(norms, _GRAD_EPS)
        delta = x - x0
        dnorm = np.linalg.norm(delta, axis=1, keepdims=True)
        scale = np.minimum(1.0, epsilon / np.maximum(dnorm, _GRAD_EPS))
        x = np.clip(x0 + delta * scale, -1.0, 1.0)
    return x


def fab_batch(detector: Detector, waves: np.ndarray, labels: np.ndarray,
              eta: float, steps: int = 10, record_history: bool = False):
    """Binary FAB: minimal-Linf projection onto the linearized boundary.

    Per step the candidate projections from the current iterate and from the
    original point are blended (alpha capped at 0.1), scaled by the overshoot
    s = 1 + eta / 100, and clamped. Whenever the decision differs from the
    true label the candidate is recorded if its Linf distance is the best so
    far, then the iterate moves 10% back toward the original point.

    Returns (adversarial, flipped, errors, histories).
    """
    x0 = np.atleast_2d(np.asarray(waves, dtype=np.float64))
    y = np.atleast_1d(np.asarray(labels)).astype(np.int64)
    B, L = x0.shape
    s = 1.0 + eta / 100.0

    best = x0.copy()
    best_dist = np.full(B, np.inf)
    flipped = np.zeros(B, dtype=bool)
    errors: list[str | None] = [None] * B
    histories: list[list[float]] | None = [[] for _ in range(B)] if record_history else None

    def note(i: int, dist: float) -> None:
        if histories is not None:
            histories[i].append(dist)

    # step 0: an already-misclassified input is adversarial at distance 0
    z0 = np.atleast_1d(detector.logits(x0))
    already = (z0 > 0).astype(np.int64) != y
    flipped[already] = True
    best_dist[already] = 0.0
    for i in np.nonzero(already)[0]:
        note(i, 0.0)

    active = ~already
    if not np.any(active):
        return best, flipped, errors, histories

    x = x0.copy()
    for _ in range(steps):
        z, w = detector.logit_input_grads(x)
        z = np.atleast_1d(z)
        _check_finite(w)
        wnorm = np.abs(w).sum(axis=1)
        dead = active & (wnorm < _GRAD_EPS)
        for i in np.nonzero(dead)[0]:
            errors[i] = "zero logit gradient"
            active[i] = False
        if not np.any(active):
            break
        wn = np.maximum(wnorm, _GRAD_EPS)[:, None]
        sign_w = np.sign(w)
        delta_star = -(z[:, None] / wn) * sign_w
        z_at_x0 = z + np.einsum("bl,bl->b", w, x0 - x)
        delta_0 = -(z_at_x0[:, None] / wn) * sign_w
        ds = np.abs(delta_star).max(axis=1)
        d0 = np.abs(delta_0).max(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            alpha = np.where(ds + d0 > 0, ds / (ds + d0), 0.0)
        alpha = np.minimum(alpha, FAB_ALPHA_MAX)[:, None]
        x_next = np.clip((1.0 - alpha) * (x + s * delta_star)
                         + alpha * (x0 + s * delta_0), -1.0, 1.0)
        x = np.where(active[:, None], x_next, x)

        z_next = np.atleast_1d(detector.logits(x))
        hit = active & ((z_next > 0).astype(np.int64) != y)
        if np.any(hit):
            dist = np.abs(x - x0).max(axis=1)
            improved = hit & (dist < best_dist)
            best[improved] = x[improved]
            best_dist[improved] = dist[improved]
            flipped[improved] = True
            for i in np.nonzero(improved)[0]:
                note(i, float(dist[i]))
            # move back toward the original point and keep searching
            x[hit] = FAB_BETA * x[hit] + (1.0 - FAB_BETA) * x0[hit]

    out = np.where(flipped[:, None], best, x)
    out[~active & ~flipped] = x0[~active & ~flipped]  # errored: fall back to clean
    return out, flipped, errors, histories


def _outcome(x0: np.ndarray, adv: np.ndarray, flipped: bool,
             error: str | None = None, history=None) -> AttackOutcome:
    delta = adv - x0
    return AttackOutcome(
        adversarial=adv,
        linf_delta=float(np.abs(delta).max()) if delta.size else 0.0,
        l2_delta=float(np.linalg.norm(delta)),
        flipped=bool(flipped),
        error=error,
        history=history,
    )


def fgsm(detector: Detector, wave, label, epsilon: float) -> AttackOutcome:
    x0 = np.asarray(wave.samples if hasattr(wave, "samples") else wave, dtype=np.float64)
    clean_pred = float(detector.logits(x0)) > 0
    adv = fgsm_batch(detector, x0, np.atleast_1d(label), epsilon)[0]
    return _outcome(x0, adv, (float(detector.logits(adv)) > 0) != clean_pred)


def pgd_l2(detector: Detector, wave, label, epsilon: float, steps: int = 10,
           step_size: float | None = None) -> AttackOutcome:
    x0 = np.asarray(wave.samples if hasattr(wave, "samples") else wave, dtype=np.float64)
    clean_pred = float(detector.logits(x0)) > 0
    adv = pgd_l2_batch(detector, x0, np.atleast_1d(label), epsilon, steps, step_size)[0]
    return _outcome(x0, adv, (float(detector.logits(adv)) > 0) != clean_pred)


def fab_binary(detector: Detector, wave, label, eta: float, steps: int = 10,
               record_history: bool = False) -> AttackOutcome:
    """Single-sample FAB; `flipped` reports adversariality against the label.

    Raises ZeroGradientError when the boundary projection is undefined.
    """
    x0 = np.asarray(wave.samples if hasattr(wave, "samples") else wave, dtype=np.float64)
    adv, flipped, errors, hist = fab_batch(detector, x0, np.atleast_1d(label),
                                           eta, steps, record_history)
    if errors[0] is not None and not flipped[0]:
        raise ZeroGradientError(errors[0])
    return _outcome(x0, adv[0], flipped[0], errors[0], hist[0] if hist else None)


def attack_batch(detector: Detector, spec: AttackSpec, waves: np.ndarray,
                 labels: np.ndarray) -> tuple[np.ndarray, np.ndarray, list]:
    """(adversarial waves, fab-flip mask or None, per-sample errors)."""
    waves = np.atleast_2d(waves)
    errors: list[str | None] = [None] * waves.shape[0]
    if spec.kind == "none":
        return waves.copy(), None, errors
    if spec.kind == "fgsm":
        return fgsm_batch(detector, waves, labels, spec.epsilon), None, errors
    if spec.kind == "pgdl2":
        return pgd_l2_batch(detector, waves, labels, spec.epsilon, spec.steps), None, errors
    adv, flipped, errors, _ = fab_batch(detector, waves, labels, spec.eta, spec.steps)
    return adv, flipped, errors


def attack_dataset(detector: Detector, spec: AttackSpec, records,
                   batch_size: int = 32) -> list[AttackOutcome]:
    """Attack every sample of a manifest split with the gradient detector.

    Per-sample failures are recorded on the outcome (with a clean-waveform
    fallback) instead of aborting the run. Note the outcomes hold full
    adversarial waveforms; use the bench helpers for large streamed runs.

    `flipped` is measured against the gradient detector's clean prediction,
    except for FAB where it reports adversariality against the true label
    (an already-misclassified input counts as flipped at distance zero).
    """
    outcomes: list[AttackOutcome] = []
    for start in range(0, len(records), batch_size):
        chunk = records[start: start + batch_size]
        waves = np.stack([audio_io.load_standardized(r.path).samples for r in chunk])
        labels = np.array([r.label for r in chunk], dtype=np.float64)
        clean_pred = np.atleast_1d(detector.logits(waves)) > 0
        try:
            adv, fab_flips, errors = attack_batch(detector, spec, waves, labels)
        except (NonFiniteGradientError, ZeroGradientError) as exc:
            adv, fab_flips = waves.copy(), None
            errors = [str(exc)] * len(chunk)
        adv_pred = np.atleast_1d(detector.logits(adv)) > 0
        for i in range(len(chunk)):
            if errors[i] is not None:
                outcomes.append(_outcome(waves[i], waves[i], False, errors[i]))
                continue
            flip = fab_flips[i] if fab_flips is not None else adv_pred[i] != clean_pred[i]
            outcomes.append(_outcome(waves[i], adv[i], flip))
    return outcomes


def export_attacked(outcomes, records, out_dir, spec: AttackSpec) -> None:
    """Write attacked audio as PCM16 WAVs plus a JSONL sidecar per sample."""
    import json
    from pathlib import Path

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "attacked.jsonl", "w", encoding="utf-8", newline="\n") as f:
        for rec, out in zip(records, outcomes):
            name = Path(rec.path).name
            audio_io.save_wav(out_dir / name,
                              audio_io.Waveform(out.adversarial, audio_io.STANDARD_RATE_HZ))
            row = {"path": name, "kind": spec.kind,
                   "params": {"epsilon": spec.epsilon, "eta": spec.eta, "steps": spec.steps},
                   "linf_delta": out.linf_delta, "l2_delta": out.l2_delta,
                   "flipped": out.flipped}
            f.write(json.dumps(row, sort_keys=True) + "\n")
