"""Differentiable LFCC/MFCC front-ends.

Pipeline per utterance: framing -> Hann window -> zero-padded magnitude rFFT
-> triangular filterbank on the power spectrum -> floored log -> orthonormal
type-II DCT. Every stage has an exact vector-Jacobian product so a loss on
the features can be differentiated back to the raw waveform.

All math is float64. Functions accept a single signal (n,) or a batch (B, n)
and return matching leading dimensions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.fft
from numpy.lib.stride_tricks import sliding_window_view

LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class FrameSpec:
    """25 ms Hann frames, 10 ms hop, zero-padded to 512 FFT points."""

    win_length: int = 400
    hop: int = 160
    n_fft: int = 512

    def __post_init__(self):
        if not (0 < self.win_length <= self.n_fft):
            raise ValueError("require 0 < win_length <= n_fft")
        if self.hop <= 0:
            raise ValueError("hop must be positive")

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1

    def frame_count(self, n_samples: int) -> int:
        if n_samples < self.win_length:
            raise ValueError(
                f"waveform of {n_samples} samples is shorter than one window")
        return (n_samples - self.win_length) // self.hop + 1


DEFAULT_FRAME = FrameSpec()
N_FRAMES_STANDARD = DEFAULT_FRAME.frame_count(64_000)  # 398


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _batched(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim == 2:
        return x, False
    raise ValueError(f"expected 1-D or 2-D input, got shape {x.shape}")


def _frames(waves: np.ndarray, spec: FrameSpec) -> np.ndarray:
    """(B, T, win) view of hop-strided frames; no copy."""
    spec.frame_count(waves.shape[1])
    return sliding_window_view(waves, spec.win_length, axis=1)[:, :: spec.hop, :]


def _overlap_add(g_frames: np.ndarray, n_samples: int, spec: FrameSpec) -> np.ndarray:
    """Scatter per-frame gradients back onto the signal (adjoint of framing).

    Vectorized by splitting each window into hop-aligned chunks: chunk c of
    frame t lands at rows t+c of the signal viewed as (n/hop, hop) blocks.
    """
    B, T, win = g_frames.shape
    hop = spec.hop
    n_rows = -(-n_samples // hop) + -(-win // hop)
    buf = np.zeros((B, n_rows, hop))
    for c in range(-(-win // hop)):
        chunk = g_frames[:, :, c * hop: (c + 1) * hop]
        buf[:, c: c + T, : chunk.shape[2]] += chunk
    return buf.reshape(B, -1)[:, :n_samples]


def stft_magnitude(waves, spec: FrameSpec = DEFAULT_FRAME):
    """One-sided magnitude spectrogram, shape (T, n_fft//2 + 1) per signal."""
    xb, single = _batched(waves)
    win = hann_window(spec.win_length)
    X = np.fft.rfft(_frames(xb, spec) * win, n=spec.n_fft, axis=2)
    mag = np.abs(X)
    return mag[0] if single else mag


def stft_magnitude_vjp(waves, g_mag, spec: FrameSpec = DEFAULT_FRAME):
    """Gradient of sum(g_mag * |STFT|) with respect to the waveform.

    Bins with exactly zero magnitude get a zero cotangent (subgradient choice
    at the non-differentiable point).
    """
    xb, single = _batched(waves)
    gb = np.asarray(g_mag, dtype=np.float64)
    if single:
        gb = gb[None, ...]
    win = hann_window(spec.win_length)
    X = np.fft.rfft(_frames(xb, spec) * win, n=spec.n_fft, axis=2)
    mag = np.abs(X)
    with np.errstate(invalid="ignore", divide="ignore"):
        Y = gb * (X / mag)
    Y[mag == 0.0] = 0.0
    # d|X_k|/dx_n summed over one-sided bins equals N * irfft of Y with the
    # interior bins halved (DC and Nyquist of a real signal are real).
    Y[:, :, 1:-1] *= 0.5
    g_padded = np.fft.irfft(Y, n=spec.n_fft, axis=2) * spec.n_fft
    g_frames = g_padded[:, :, : spec.win_length] * win
    out = _overlap_add(g_frames, xb.shape[1], spec)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# Filterbank


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@dataclass(frozen=True)
class FilterbankSpec:
    n_filters: int = 80
    scale: str = "linear"  # or "mel"
    f_min: float = 0.0
    f_max: float = 8000.0

    def __post_init__(self):
        if self.scale not in ("linear", "mel"):
            raise ValueError(f"unknown filterbank scale {self.scale!r}")
        if self.n_filters < 1 or self.f_min < 0 or self.f_max <= self.f_min:
            raise ValueError("invalid filterbank parameters")


def filterbank_edges(fb: FilterbankSpec) -> np.ndarray:
    """n_filters + 2 band edges in Hz; edges[1:-1] are the filter centers."""
    if fb.scale == "mel":
        return mel_to_hz(np.linspace(hz_to_mel(fb.f_min), hz_to_mel(fb.f_max),
                                     fb.n_filters + 2))
    return np.linspace(fb.f_min, fb.f_max, fb.n_filters + 2)


def filterbank_matrix(fb: FilterbankSpec, spec: FrameSpec = DEFAULT_FRAME,
                      sample_rate: int = 16_000) -> np.ndarray:
    """Triangular unit-peak filters evaluated on FFT bin frequencies.

    Returns (n_bins, n_filters). Edges are equally spaced in Hz for the
    linear scale and in mel for the mel scale.
    """
    edges = filterbank_edges(fb)
    freqs = np.arange(spec.n_bins) * (sample_rate / spec.n_fft)
    B = np.zeros((spec.n_bins, fb.n_filters))
    for i in range(fb.n_filters):
        lo, center, hi = edges[i], edges[i + 1], edges[i + 2]
        rising = (freqs - lo) / (center - lo)
        falling = (hi - freqs) / (hi - center)
        B[:, i] = np.clip(np.minimum(rising, falling), 0.0, 1.0)
    return B


def apply_filterbank(mag, B):
    """Filterbank energies of the power spectrum: (mag ** 2) @ B."""
    mag = np.asarray(mag, dtype=np.float64)
    if mag.shape[-1] != B.shape[0]:
        raise ValueError(f"bin count {mag.shape[-1]} does not match filterbank {B.shape[0]}")
    return (mag * mag) @ B


def apply_filterbank_vjp(mag, g_energies, B):
    mag = np.asarray(mag, dtype=np.float64)
    return 2.0 * mag * (g_energies @ B.T)


def log_energies(e, floor: float = LOG_FLOOR):
    e = np.asarray(e, dtype=np.float64)
    if np.any(e < 0):
        raise ValueError("energies must be non-negative")
    return np.log(np.maximum(e, floor))


def log_energies_vjp(e, g_log, floor: float = LOG_FLOOR):
    """Zero gradient wherever the floor is active."""
    e = np.asarray(e, dtype=np.float64)
    return np.where(e >= floor, g_log / np.maximum(e, floor), 0.0)


def dct2_orthonormal(le):
    """Orthonormal type-II DCT along the coefficient axis, all coefficients kept."""
    return scipy.fft.dct(np.asarray(le, dtype=np.float64), type=2, norm="ortho", axis=-1)


def dct2_orthonormal_vjp(g_coeffs):
    # The transform is orthonormal, so the adjoint is its inverse.
    return scipy.fft.idct(np.asarray(g_coeffs, dtype=np.float64), type=2, norm="ortho", axis=-1)


# ---------------------------------------------------------------------------
# Composed front-ends


@dataclass
class FeatureMatrix:
    """T x C cepstral features plus the front-end tag that produced them."""

    values: np.ndarray
    kind: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("FeatureMatrix must be 2-D (frames x coefficients)")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature matrix contains non-finite entries")


class CepstralFrontEnd:
    """framing -> |STFT| -> triangular filterbank -> log -> DCT-II.

    `forward_vjp` additionally returns a closure mapping feature cotangents
    back to waveform gradients, chaining the stage adjoints.
    """

    def __init__(self, scale: str = "linear", n_filters: int = 80,
                 n_coeffs: int | None = None, frame: FrameSpec = DEFAULT_FRAME,
                 sample_rate: int = 16_000):
        self.frame = frame
        self.fb = FilterbankSpec(n_filters=n_filters, scale=scale)
        self.n_coeffs = n_filters if n_coeffs is None else n_coeffs
        if not 0 < self.n_coeffs <= n_filters:
            raise ValueError("n_coeffs must lie in [1, n_filters]")
        self.B = filterbank_matrix(self.fb, frame, sample_rate)
        # triangular filters are narrow; a sparse gather beats the dense matmul
        from .fastconv import SparseFilterbank

        self._sparse = SparseFilterbank(self.B)
        self._window = hann_window(frame.win_length)
        self._vjp_scale = self._window * frame.n_fft
        self.kind = "lfcc" if scale == "linear" else "mfcc"

    def _spectrum(self, xb):
        return np.fft.rfft(_frames(xb, self.frame) * self._window,
                           n=self.frame.n_fft, axis=2)

    def forward(self, waves):
        xb, single = _batched(waves)
        mag = np.abs(self._spectrum(xb))
        feats = dct2_orthonormal(log_energies(self._sparse.apply_power(mag * mag)))
        feats = feats[:, :, : self.n_coeffs]
        return feats[0] if single else feats

    def forward_vjp(self, waves):
        xb, single = _batched(waves)
        n_samples = xb.shape[1]
        X = self._spectrum(xb)
        mag = np.abs(X)
        e = self._sparse.apply_power(mag * mag)
        feats = dct2_orthonormal(log_energies(e))[:, :, : self.n_coeffs]

        def vjp(g_feats):
            gb = np.asarray(g_feats, dtype=np.float64)
            if single:
                gb = gb[None, ...]
            if self.n_coeffs < self.B.shape[1]:
                padded = np.zeros(gb.shape[:-1] + (self.B.shape[1],))
                padded[..., : self.n_coeffs] = gb
                gb = padded
            g_log = dct2_orthonormal_vjp(gb)
            g_e = log_energies_vjp(e, g_log)
            g_mag = 2.0 * mag * self._sparse.vjp_power(g_e)
            with np.errstate(invalid="ignore", divide="ignore"):
                Y = g_mag * (X / mag)
            Y[mag == 0.0] = 0.0
            Y[:, :, 1:-1] *= 0.5
            g_frames = np.fft.irfft(Y, n=self.frame.n_fft, axis=2)[:, :, : self.frame.win_length]
            g_frames *= self._vjp_scale
            out = _overlap_add(g_frames, n_samples, self.frame)
            return out[0] if single else out

        return (feats[0] if single else feats), vjp


LFCC_FRONT_END = CepstralFrontEnd(scale="linear", n_filters=80)
MFCC_FRONT_END = CepstralFrontEnd(scale="mel", n_filters=80)


def lfcc(wave) -> FeatureMatrix:
    """80-coefficient linear-frequency cepstra of a standardized waveform."""
    samples = wave.samples if hasattr(wave, "samples") else wave
    return FeatureMatrix(LFCC_FRONT_END.forward(samples), "lfcc")


def mfcc(wave, n_coeffs: int = 80, n_filters: int = 80) -> FeatureMatrix:
    """Mel-frequency cepstra; defaults mirror the LFCC shape for model input."""
    samples = wave.samples if hasattr(wave, "samples") else wave
    if n_coeffs == n_filters == 80:
        values = MFCC_FRONT_END.forward(samples)
    else:
        fe = CepstralFrontEnd(scale="mel", n_filters=n_filters, n_coeffs=n_coeffs)
        values = fe.forward(samples)
    return FeatureMatrix(values, "mfcc")


# ---------------------------------------------------------------------------
# Feature dump format: one JSON header line, then row-major float64 LE.


def save_features(path, fm: FeatureMatrix) -> None:
    header = {"kind": fm.kind, "T": fm.values.shape[0], "C": fm.values.shape[1]}
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        f.write(fm.values.astype("<f8").tobytes(order="C"))


def load_features(path) -> FeatureMatrix:
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    header = json.loads(raw[:nl].decode("utf-8"))
    values = np.frombuffer(raw[nl + 1:], dtype="<f8").reshape(header["T"], header["C"])
    return FeatureMatrix(values.copy(), header["kind"])
