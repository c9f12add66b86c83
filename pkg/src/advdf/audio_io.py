"""Waveform loading, synthesis, standardization, and dataset manifests.

Everything here is deterministic given explicit seeds. WAV support is
deliberately narrow: RIFF/WAVE with PCM 16-bit or IEEE float 32-bit payloads,
any channel count on read (averaged to mono), PCM16 mono on write.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

STANDARD_RATE_HZ = 16_000
STANDARD_SAMPLES = 64_000

LABEL_BONAFIDE = 0
LABEL_FAKE = 1
LABEL_NAMES = {LABEL_BONAFIDE: "bonafide", LABEL_FAKE: "fake"}
LABEL_IDS = {v: k for k, v in LABEL_NAMES.items()}
SPLITS = ("train", "valid", "test")


class AudioIOError(Exception):
    """Base class for audio file problems."""


class MalformedWavError(AudioIOError):
    """The file is not a parseable RIFF/WAVE container."""


class UnsupportedCodecError(AudioIOError):
    """The WAV codec is not PCM16 or IEEE float32."""


class EmptyAudioError(AudioIOError):
    """The audio payload contains no samples."""


class ManifestError(Exception):
    """A dataset manifest is missing, malformed, or references bad data."""


@dataclass
class Waveform:
    """Fixed-rate audio samples, nominal amplitude range [-1, 1]."""

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError(f"samples must be 1-D, got shape {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")
        if int(self.sample_rate_hz) <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate_hz}")
        self.sample_rate_hz = int(self.sample_rate_hz)

    def __len__(self) -> int:
        return self.samples.shape[0]


@dataclass(frozen=True)
class ManifestRecord:
    path: Path
    label: int
    split: str


# ---------------------------------------------------------------------------
# WAV read/write


def _read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise MalformedWavError(f"truncated file while reading {what}")
    return data


def load_wav(path) -> Waveform:
    """Load a RIFF/WAVE file as mono float64.

    Integer PCM16 is scaled to [-1, 1) by dividing by 32768; float32 payloads
    are taken verbatim. Multi-channel audio is averaged to mono.
    """
    path = Path(path)
    with open(path, "rb") as f:
        header = _read_exact(f, 12, "RIFF header")
        if header[:4] != b"RIFF" or header[8:12] != b"WAVE":
            raise MalformedWavError(f"{path}: not a RIFF/WAVE file")

        fmt = None
        data = None
        while True:
            chunk_hdr = f.read(8)
            if len(chunk_hdr) == 0:
                break
            if len(chunk_hdr) < 8:
                raise MalformedWavError(f"{path}: truncated chunk header")
            chunk_id, chunk_size = struct.unpack("<4sI", chunk_hdr)
            if chunk_id == b"fmt ":
                if chunk_size < 16:
                    raise MalformedWavError(f"{path}: fmt chunk too small")
                fmt = struct.unpack("<HHIIHH", _read_exact(f, 16, "fmt chunk")[:16])
                f.seek(chunk_size - 16, 1)
            elif chunk_id == b"data":
                data = _read_exact(f, chunk_size, "data chunk")
            else:
                f.seek(chunk_size, 1)
            if chunk_size % 2 == 1:  # RIFF chunks are word-aligned
                f.seek(1, 1)

    if fmt is None or data is None:
        raise MalformedWavError(f"{path}: missing fmt or data chunk")

    audio_format, n_channels, sample_rate, _, _, bits = fmt
    if n_channels < 1:
        raise MalformedWavError(f"{path}: invalid channel count {n_channels}")
    if audio_format == 1 and bits == 16:
        raw = np.frombuffer(data[: len(data) - len(data) % (2 * n_channels)], dtype="<i2")
        samples = raw.astype(np.float64) / 32768.0
    elif audio_format == 3 and bits == 32:
        raw = np.frombuffer(data[: len(data) - len(data) % (4 * n_channels)], dtype="<f4")
        samples = raw.astype(np.float64)
    else:
        raise UnsupportedCodecError(
            f"{path}: unsupported codec (format={audio_format}, bits={bits}); "
            "only PCM16 and IEEE float32 are supported"
        )

    if samples.size == 0:
        raise EmptyAudioError(f"{path}: zero-length audio payload")
    if n_channels > 1:
        samples = samples.reshape(-1, n_channels).mean(axis=1)
    return Waveform(samples, sample_rate)


def save_wav(path, wave: Waveform) -> None:
    """Write mono PCM16 little-endian WAV."""
    pcm = np.clip(np.round(wave.samples * 32768.0), -32768, 32767).astype("<i2")
    data = pcm.tobytes()
    rate = wave.sample_rate_hz
    header = b"RIFF" + struct.pack("<I", 36 + len(data)) + b"WAVE"
    header += b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, rate, rate * 2, 2, 16)
    header += b"data" + struct.pack("<I", len(data))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(header + data)


# ---------------------------------------------------------------------------
# Standardization


def resample(wave: Waveform, target_hz: int) -> Waveform:
    """Linear-interpolation resampling to target_hz.

    Output length is round(len * target / source). Returns the input object
    unchanged when the rate already matches.
    """
    if target_hz <= 0:
        raise ValueError(f"target rate must be positive, got {target_hz}")
    if wave.sample_rate_hz == target_hz:
        return wave
    n_in = len(wave)
    n_out = int(round(n_in * target_hz / wave.sample_rate_hz))
    positions = np.arange(n_out) * (wave.sample_rate_hz / target_hz)
    out = np.interp(positions, np.arange(n_in), wave.samples)
    return Waveform(out, target_hz)


def standardize_duration(wave: Waveform, n_samples: int = STANDARD_SAMPLES) -> Waveform:
    """Trim to n_samples, or pad by tiling the signal end-to-end."""
    n = len(wave)
    if n == 0:
        raise EmptyAudioError("cannot standardize an empty waveform")
    if n == n_samples:
        return wave
    if n > n_samples:
        out = wave.samples[:n_samples]
    else:
        reps = -(-n_samples // n)
        out = np.tile(wave.samples, reps)[:n_samples]
    return Waveform(out, wave.sample_rate_hz)


def load_standardized(path) -> Waveform:
    """Load, resample to 16 kHz mono, and fix the duration to 64k samples."""
    return standardize_duration(resample(load_wav(path), STANDARD_RATE_HZ))


# ---------------------------------------------------------------------------
# Synthetic corpus

# Internal generator constants, chosen so the fake class is learnable by both
# detector families yet subtle enough that trained margins stay attackable.
_F0_RANGE = (100.0, 300.0)
_N_HARMONICS = (3, 6)
_PEAK_RANGE = (0.12, 0.2)
_NOISE_LEVEL = 1e-3
_NOISE_CUTOFF_HZ = 1800.0  # speech-shaped floor; keeps 4-8 kHz clean in bonafide
_NOTCH_CENTER_RANGE = (2900.0, 3100.0)
_NOTCH_WIDTH_RANGE = (1400.0, 1600.0)
_TREMOLO_DEPTH_RANGE = (0.7, 0.9)
_TREMOLO_RATE_HZ = 50.0
_QUANT_BITS = 6


@dataclass(frozen=True)
class SynthSpec:
    """Deterministic synthetic-corpus description (counts are per class)."""

    n_train: int = 1000
    n_valid: int = 200
    n_test: int = 1000
    seed: int = 2024
    artifact_strength: float = 1.0
    duration_s: float = 4.0

    def __post_init__(self):
        for name in ("n_train", "n_valid", "n_test"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.artifact_strength <= 1.0:
            raise ValueError("artifact_strength must lie in (0, 1]")
        if self.duration_s <= 0:
            raise ValueError("duration_s must be positive")

    def count_for(self, split: str) -> int:
        return {"train": self.n_train, "valid": self.n_valid, "test": self.n_test}[split]


def _synth_base(rng: np.random.Generator, n: int) -> np.ndarray:
    """Harmonic voice-like signal: stacked partials, slow envelope, noise.

    The fundamental is always present and one partial is steered into the
    2.2-3.8 kHz region so the notch artifact removes real tonal content.
    """
    sr = STANDARD_RATE_HZ
    t = np.arange(n) / sr
    f0 = rng.uniform(*_F0_RANGE)
    n_harm = int(rng.integers(_N_HARMONICS[0], _N_HARMONICS[1] + 1))
    decay = rng.uniform(0.2, 0.6)
    k_max = int(3900.0 / f0)
    mid = int(rng.integers(int(np.ceil(2200.0 / f0)), int(3800.0 / f0) + 1))
    pool = [k for k in range(2, k_max + 1) if k != mid]
    extra = list(rng.choice(pool, size=max(0, n_harm - 2), replace=False))
    partials = [1, mid] + [int(k) for k in extra]
    sig = np.zeros(n)
    for k in partials[:n_harm]:
        amp = rng.uniform(0.4, 1.0) / k**decay
        phase = rng.uniform(0.0, 2.0 * np.pi)
        sig += amp * np.sin(2.0 * np.pi * f0 * k * t + phase)

    # Smooth random amplitude envelope from a few low-frequency cosines.
    env = np.ones(n)
    for _ in range(3):
        rate = rng.uniform(0.2, 2.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        env += rng.uniform(0.1, 0.4) * np.cos(2.0 * np.pi * rate * t + phase)
    env = 0.3 + 0.7 * (env - env.min()) / (env.max() - env.min())
    sig *= env

    peak = rng.uniform(*_PEAK_RANGE)
    sig *= peak / np.max(np.abs(sig))
    noise = np.fft.rfft(rng.standard_normal(n))
    noise[np.fft.rfftfreq(n, 1.0 / sr) > _NOISE_CUTOFF_HZ] = 0.0
    sig += _NOISE_LEVEL * np.fft.irfft(noise, n=n)
    return np.clip(sig, -1.0, 1.0)


def _apply_artifact(sig: np.ndarray, rng: np.random.Generator, strength: float) -> np.ndarray:
    """Blend one deterministic artifact into the signal.

    The blended form x + strength * (modified - x) is exactly the identity at
    strength 0 regardless of which artifact parameters were drawn.
    """
    kind = int(rng.integers(0, 3))
    n = sig.shape[0]
    sr = STANDARD_RATE_HZ
    if kind == 0:  # spectral notch between 2-4 kHz
        center = rng.uniform(*_NOTCH_CENTER_RANGE)
        width = rng.uniform(*_NOTCH_WIDTH_RANGE)
        freqs = np.fft.rfftfreq(n, d=1.0 / sr)
        mask = np.ones_like(freqs)
        band = np.abs(freqs - center) < width / 2.0
        mask[band] = 0.0
        modified = np.fft.irfft(np.fft.rfft(sig) * mask, n=n)
    elif kind == 1:  # amplitude quantization
        levels = 2.0 ** (_QUANT_BITS - 1)
        modified = np.round(sig * levels) / levels
    else:  # periodic amplitude tremolo
        depth = rng.uniform(*_TREMOLO_DEPTH_RANGE)
        t = np.arange(n) / sr
        tremolo = 1.0 - depth * (0.5 - 0.5 * np.cos(2.0 * np.pi * _TREMOLO_RATE_HZ * t))
        modified = sig * tremolo
    return np.clip(sig + strength * (modified - sig), -1.0, 1.0)


def synth_sample(seed: int, split: str, label: int, index: int,
                 strength: float, n_samples: int = STANDARD_SAMPLES) -> Waveform:
    """Generate one deterministic sample keyed by (seed, split, label, index)."""
    rng = np.random.default_rng([seed, SPLITS.index(split), label, index])
    sig = _synth_base(rng, n_samples)
    if label == LABEL_FAKE:
        sig = _apply_artifact(sig, rng, strength)
    return Waveform(sig, STANDARD_RATE_HZ)


def synthesize_dataset(spec: SynthSpec, out_dir) -> list[ManifestRecord]:
    """Write the synthetic corpus as PCM16 WAVs plus a manifest CSV.

    Bit-reproducible for equal specs: every sample is keyed by
    (seed, split, label, index) alone.
    """
    out_dir = Path(out_dir)
    n_samples = int(round(spec.duration_s * STANDARD_RATE_HZ))
    records = []
    for split in SPLITS:
        for label in (LABEL_BONAFIDE, LABEL_FAKE):
            for idx in range(spec.count_for(split)):
                wave = synth_sample(spec.seed, split, label, idx,
                                    spec.artifact_strength, n_samples)
                wave = standardize_duration(wave)
                full = out_dir / split / f"{LABEL_NAMES[label]}_{idx:05d}.wav"
                save_wav(full, wave)
                records.append(ManifestRecord(path=full, label=label, split=split))
    write_manifest(records, out_dir / "manifest.csv")
    return records


# ---------------------------------------------------------------------------
# Manifests and class balancing


def write_manifest(records, path) -> None:
    """CSV with header path,label,split; paths relative to the CSV location."""
    import os

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["path", "label", "split"])
        for rec in records:
            rel = os.path.relpath(rec.path, path.parent) if Path(rec.path).is_absolute() \
                else Path(rec.path).as_posix()
            writer.writerow([Path(rel).as_posix(), LABEL_NAMES[rec.label], rec.split])


def read_manifest(path) -> list[ManifestRecord]:
    """Load and validate a manifest; record paths are resolved and must exist."""
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    base = path.parent
    records = []
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != ["path", "label", "split"]:
            raise ManifestError(f"{path}: expected header path,label,split")
        for row in reader:
            label = row["label"]
            if label not in LABEL_IDS:
                raise ManifestError(f"{path}: unknown label {label!r}")
            split = row["split"]
            if split not in SPLITS:
                raise ManifestError(f"{path}: unknown split {split!r}")
            full = base / row["path"]
            if not full.is_file():
                raise ManifestError(f"{path}: missing audio file {full}")
            records.append(ManifestRecord(path=full, label=LABEL_IDS[label], split=split))
    return records


def split_records(records, split: str) -> list[ManifestRecord]:
    return [r for r in records if r.split == split]


def balance_oversample(records, rng_seed: int) -> list[ManifestRecord]:
    """Equalize class counts by duplicating minority records with replacement.

    Originals keep their input order; duplicates are appended at the end.
    """
    by_label = {LABEL_BONAFIDE: [], LABEL_FAKE: []}
    for rec in records:
        by_label[rec.label].append(rec)
    if not by_label[LABEL_BONAFIDE] or not by_label[LABEL_FAKE]:
        raise ValueError("balance_oversample requires at least one record per class")
    n_bona, n_fake = len(by_label[LABEL_BONAFIDE]), len(by_label[LABEL_FAKE])
    if n_bona == n_fake:
        return list(records)
    minority = by_label[LABEL_BONAFIDE] if n_bona < n_fake else by_label[LABEL_FAKE]
    deficit = abs(n_bona - n_fake)
    rng = np.random.default_rng(rng_seed)
    extra = [minority[i] for i in rng.integers(0, len(minority), size=deficit)]
    return list(records) + extra


def load_split_waves(records, split: str | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Load (waves, labels) arrays for a manifest split, in manifest order."""
    subset = split_records(records, split) if split else list(records)
    if not subset:
        raise ManifestError(f"no records for split {split!r}")
    waves = np.empty((len(subset), STANDARD_SAMPLES))
    labels = np.empty(len(subset), dtype=np.int64)
    for i, rec in enumerate(subset):
        waves[i] = load_standardized(rec.path).samples
        labels[i] = rec.label
    return waves, labels
