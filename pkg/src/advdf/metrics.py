"""Equal error rate, mel-cepstral distortion, and accuracy.

Score orientation is fixed throughout: higher score = more fake, and the
hard decision rule is logit > 0 => fake.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import CepstralFrontEnd

MCD_SCALE = 10.0 / np.log(10.0)

# MCD front-end: 20 mel filters, coefficients 1..13 (c0 dropped), frames
# aligned sample-exactly because attacks preserve length.
_MCD_FRONT_END = CepstralFrontEnd(scale="mel", n_filters=20, n_coeffs=14)


@dataclass
class ScoreSet:
    bonafide_scores: np.ndarray
    fake_scores: np.ndarray

    def __post_init__(self):
        self.bonafide_scores = np.asarray(self.bonafide_scores, dtype=np.float64)
        self.fake_scores = np.asarray(self.fake_scores, dtype=np.float64)
        if self.bonafide_scores.size == 0 or self.fake_scores.size == 0:
            raise ValueError("EER needs at least one score per class")
        if not (np.all(np.isfinite(self.bonafide_scores))
                and np.all(np.isfinite(self.fake_scores))):
            raise ValueError("scores must be finite")


def compute_eer(bonafide_scores, fake_scores=None) -> float:
    """EER by threshold sweep over the observed scores.

    At threshold t a sample is called fake when its score >= t, so
    FPR(t) = P(bonafide >= t) and FNR(t) = P(fake < t). The sweep picks the
    threshold minimizing |FPR - FNR| and returns (FPR + FNR) / 2 there; when
    two adjacent thresholds bracket the crossing equally, their values are
    interpolated. Scores above 0.5 are legitimate (inverted classifiers).
    """
    scores = bonafide_scores if fake_scores is None else ScoreSet(bonafide_scores, fake_scores)
    bona, fake = scores.bonafide_scores, scores.fake_scores
    bona_sorted = np.sort(bona)
    fake_sorted = np.sort(fake)
    merged = np.unique(np.concatenate([bona_sorted, fake_sorted]))
    thresholds = np.append(merged, merged[-1] + 1.0)  # sentinel past the max
    fpr = 1.0 - np.searchsorted(bona_sorted, thresholds, side="left") / bona.size
    fnr = np.searchsorted(fake_sorted, thresholds, side="left") / fake.size
    d = fpr - fnr  # non-increasing, from +1 down to -1
    mid = (fpr + fnr) / 2.0
    i2 = int(np.argmax(d < 0))  # first negative; d[i2 - 1] >= 0
    if i2 == 0:
        return float(mid[0])
    i1 = i2 - 1
    if d[i1] == 0.0:
        return float(mid[i1])
    if abs(d[i1]) < abs(-d[i2]):
        return float(mid[i1])
    if abs(d[i1]) > abs(-d[i2]):
        return float(mid[i2])
    return float((mid[i1] + mid[i2]) / 2.0)  # crossing exactly between


def accuracy(logits, labels) -> float:
    """Fraction of correct hard decisions (logit > 0 => fake)."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels)
    if z.size == 0 or z.shape != y.shape:
        raise ValueError("logits and labels must be non-empty and equal length")
    return float(np.mean((z > 0).astype(np.int64) == y))


# ---------------------------------------------------------------------------
# Mel-cepstral distortion


def mcd_cepstra(waves: np.ndarray) -> np.ndarray:
    """MCD cepstra: 20-mel-filter MFCC keeping coefficients 1..13."""
    return _MCD_FRONT_END.forward(waves)[..., 1:]


def mcd_from_cepstra(c_ref: np.ndarray, c_other: np.ndarray) -> float:
    """Mean over frames of (10/ln 10) * sqrt(2 * sum_k (c_k - c'_k)^2), in dB."""
    diff = np.asarray(c_ref, dtype=np.float64) - np.asarray(c_other, dtype=np.float64)
    return float(np.mean(MCD_SCALE * np.sqrt(2.0 * np.sum(diff * diff, axis=-1))))


def compute_mcd(wave, wave_adv) -> float:
    """MCD between two equal-length waveforms (no time warping needed)."""
    x = np.asarray(wave.samples if hasattr(wave, "samples") else wave, dtype=np.float64)
    y = np.asarray(wave_adv.samples if hasattr(wave_adv, "samples") else wave_adv,
                   dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    return mcd_from_cepstra(mcd_cepstra(x), mcd_cepstra(y))


@dataclass
class McdReport:
    """Per-sample MCD of successfully attacked (decision-flipped) samples."""

    values: np.ndarray
    count: int

    @property
    def mean(self) -> float:
        return float(np.mean(self.values)) if self.count else float("nan")


def mcd_report(clean_waves: np.ndarray, adv_waves: np.ndarray,
               flipped: np.ndarray) -> McdReport:
    flipped = np.asarray(flipped, dtype=bool)
    values = [compute_mcd(clean_waves[i], adv_waves[i]) for i in np.nonzero(flipped)[0]]
    return McdReport(values=np.asarray(values, dtype=np.float64), count=len(values))
