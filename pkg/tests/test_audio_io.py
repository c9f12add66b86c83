import hashlib
import struct

import numpy as np
import pytest

from advdf import audio_io
from advdf.audio_io import (
    EmptyAudioError,
    MalformedWavError,
    ManifestError,
    SynthSpec,
    UnsupportedCodecError,
    Waveform,
    balance_oversample,
    load_wav,
    read_manifest,
    resample,
    save_wav,
    standardize_duration,
    synthesize_dataset,
)


def make_wav_bytes(frames: bytes, *, fmt=1, channels=1, rate=16000, bits=16) -> bytes:
    """Hand-assembled RIFF container, independent of save_wav."""
    block = channels * bits // 8
    header = b"RIFF" + struct.pack("<I", 36 + len(frames)) + b"WAVE"
    header += b"fmt " + struct.pack("<IHHIIHH", 16, fmt, channels, rate, rate * block, block, bits)
    header += b"data" + struct.pack("<I", len(frames))
    return header + frames


class TestLoadWav:
    def test_zero_pcm16_second(self, tmp_path):
        p = tmp_path / "z.wav"
        p.write_bytes(make_wav_bytes(b"\x00\x00" * 16000))
        w = load_wav(p)
        assert w.sample_rate_hz == 16000
        assert len(w) == 16000
        assert np.all(w.samples == 0.0)

    def test_pcm16_full_scale_negative(self, tmp_path):
        p = tmp_path / "m.wav"
        p.write_bytes(make_wav_bytes(struct.pack("<h", -32768)))
        assert load_wav(p).samples[0] == -1.0

    def test_stereo_channel_mean(self, tmp_path):
        p = tmp_path / "s.wav"
        p.write_bytes(make_wav_bytes(struct.pack("<hh", 16384, -16384), channels=2))
        assert load_wav(p).samples[0] == 0.0

    def test_float32_payload(self, tmp_path):
        p = tmp_path / "f.wav"
        vals = np.array([0.25, -0.5, 1.0], dtype="<f4")
        p.write_bytes(make_wav_bytes(vals.tobytes(), fmt=3, bits=32))
        np.testing.assert_array_equal(load_wav(p).samples, vals.astype(np.float64))

    def test_malformed_magic(self, tmp_path):
        p = tmp_path / "bad.wav"
        p.write_bytes(b"JUNK" + make_wav_bytes(b"\x00\x00")[4:])
        with pytest.raises(MalformedWavError):
            load_wav(p)

    def test_truncated_data_chunk(self, tmp_path):
        p = tmp_path / "t.wav"
        p.write_bytes(make_wav_bytes(b"\x00\x00" * 100)[:-50])
        with pytest.raises(MalformedWavError):
            load_wav(p)

    def test_unsupported_codec(self, tmp_path):
        p = tmp_path / "u.wav"
        p.write_bytes(make_wav_bytes(b"\x00" * 8, fmt=2, bits=16))
        with pytest.raises(UnsupportedCodecError):
            load_wav(p)

    def test_unsupported_bit_depth(self, tmp_path):
        p = tmp_path / "u8.wav"
        p.write_bytes(make_wav_bytes(b"\x80" * 8, fmt=1, bits=8))
        with pytest.raises(UnsupportedCodecError):
            load_wav(p)

    def test_empty_payload(self, tmp_path):
        p = tmp_path / "e.wav"
        p.write_bytes(make_wav_bytes(b""))
        with pytest.raises(EmptyAudioError):
            load_wav(p)


class TestSaveLoadRoundTrip:
    def test_quantization_error_bound(self, tmp_path):
        rng = np.random.default_rng(7)
        samples = np.concatenate([rng.uniform(-1, 1, 5000), [-1.0, 1.0, 0.0]])
        p = tmp_path / "rt.wav"
        save_wav(p, Waveform(samples, 16000))
        back = load_wav(p)
        assert np.max(np.abs(back.samples - samples)) <= 1.0 / 32768 + 1e-15

    def test_save_is_byte_deterministic(self, tmp_path):
        w = Waveform(np.sin(np.arange(1000) * 0.01), 16000)
        save_wav(tmp_path / "a.wav", w)
        save_wav(tmp_path / "b.wav", w)
        assert (tmp_path / "a.wav").read_bytes() == (tmp_path / "b.wav").read_bytes()


class TestResample:
    def test_identity_when_rate_matches(self):
        w = Waveform(np.ones(100), 16000)
        assert resample(w, 16000) is w

    def test_constant_signal(self):
        w = Waveform(np.full(8000, 0.37), 8000)
        out = resample(w, 16000)
        assert out.sample_rate_hz == 16000
        assert len(out) == 16000
        np.testing.assert_allclose(out.samples[:-2], 0.37, atol=1e-9)

    def test_sine_dominant_bin_preserved(self):
        # 1 kHz sine sampled at 48 kHz, one second; after resampling to 16 kHz
        # the DFT peak must sit at the 1 kHz bin.
        t = np.arange(48000) / 48000.0
        w = Waveform(0.5 * np.sin(2 * np.pi * 1000.0 * t), 48000)
        out = resample(w, 16000)
        assert len(out) == 16000
        spec = np.abs(np.fft.rfft(out.samples))
        assert np.argmax(spec) == 1000  # 1 Hz resolution at 16k samples

    def test_length_rounding(self):
        w = Waveform(np.zeros(999), 44100)
        out = resample(w, 16000)
        assert len(out) == round(999 * 16000 / 44100)

    def test_bad_target_rate(self):
        with pytest.raises(ValueError):
            resample(Waveform(np.zeros(10), 8000), 0)


class TestStandardizeDuration:
    def test_identity(self):
        w = Waveform(np.arange(64000, dtype=float) / 64000, 16000)
        out = standardize_duration(w)
        np.testing.assert_array_equal(out.samples, w.samples)

    def test_trim(self):
        w = Waveform(np.arange(70000, dtype=float), 16000)
        out = standardize_duration(w)
        np.testing.assert_array_equal(out.samples, w.samples[:64000])

    def test_tiling(self):
        w = Waveform(np.array([0.1, 0.2, 0.3]), 16000)
        out = standardize_duration(w)
        assert len(out) == 64000
        np.testing.assert_array_equal(out.samples[:6], [0.1, 0.2, 0.3, 0.1, 0.2, 0.3])
        assert out.samples[63999] == w.samples[63999 % 3]

    def test_idempotent(self):
        w = Waveform(np.random.default_rng(0).uniform(-1, 1, 100), 16000)
        once = standardize_duration(w)
        twice = standardize_duration(once)
        np.testing.assert_array_equal(once.samples, twice.samples)

    def test_empty_input(self):
        with pytest.raises(EmptyAudioError):
            standardize_duration(Waveform(np.zeros(0), 16000))


def corpus_digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(root).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()


TINY = SynthSpec(n_train=2, n_valid=1, n_test=1, seed=99, artifact_strength=0.8)


class TestSynthesizeDataset:
    def test_reproducible_bytes(self, tmp_path):
        synthesize_dataset(TINY, tmp_path / "a")
        synthesize_dataset(TINY, tmp_path / "b")
        assert corpus_digest(tmp_path / "a") == corpus_digest(tmp_path / "b")

    def test_manifest_counts_and_validity(self, tmp_path):
        records = synthesize_dataset(TINY, tmp_path / "c")
        assert len(records) == 2 * (2 + 1 + 1)
        loaded = read_manifest(tmp_path / "c" / "manifest.csv")
        assert len(loaded) == len(records)
        for rec in loaded:
            w = load_wav(rec.path)
            assert len(w) == 64000
            assert w.sample_rate_hz == 16000
            assert np.all(np.abs(w.samples) <= 1.0)

    def test_zero_strength_matches_bonafide_draws(self):
        # Fake generation consumes the same base draws as bonafide; with the
        # artifact blended at strength 0 the outputs must be identical.
        bona = audio_io.synth_sample(5, "train", audio_io.LABEL_BONAFIDE, 3, 0.8)
        rng = np.random.default_rng([5, 0, audio_io.LABEL_BONAFIDE, 3])
        base = audio_io._synth_base(rng, 64000)
        faked_at_zero = audio_io._apply_artifact(base, rng, 0.0)
        np.testing.assert_array_equal(faked_at_zero, bona.samples)

    def test_full_strength_differs(self):
        fake = audio_io.synth_sample(5, "train", audio_io.LABEL_FAKE, 3, 1.0)
        rng = np.random.default_rng([5, 0, audio_io.LABEL_FAKE, 3])
        base = audio_io._synth_base(rng, 64000)
        assert not np.array_equal(fake.samples, base)


class TestBalanceOversample:
    def rec(self, i, label):
        return audio_io.ManifestRecord(path=f"{i}.wav", label=label, split="train")

    def test_already_balanced(self):
        recs = [self.rec(i, i % 2) for i in range(6)]
        assert balance_oversample(recs, 0) == recs

    def test_oversamples_minority(self):
        recs = [self.rec(i, 1) for i in range(10)] + [self.rec(i + 10, 0) for i in range(4)]
        out = balance_oversample(recs, 123)
        assert len(out) == 20
        assert sum(r.label == 0 for r in out) == 10
        assert out[:14] == recs  # originals preserved, duplicates appended
        assert all(r.label == 0 for r in out[14:])

    def test_deterministic(self):
        recs = [self.rec(i, 1) for i in range(7)] + [self.rec(i + 7, 0) for i in range(3)]
        assert balance_oversample(recs, 42) == balance_oversample(recs, 42)

    def test_empty_class_rejected(self):
        with pytest.raises(ValueError):
            balance_oversample([self.rec(0, 1)], 0)


class TestManifest:
    def test_roundtrip(self, tmp_path):
        records = synthesize_dataset(TINY, tmp_path)
        loaded = read_manifest(tmp_path / "manifest.csv")
        assert [r.split for r in loaded] == [r.split for r in records]
        assert [r.label for r in loaded] == [r.label for r in records]

    def test_missing_file_rejected(self, tmp_path):
        (tmp_path / "manifest.csv").write_text("path,label,split\nnope.wav,fake,train\n")
        with pytest.raises(ManifestError):
            read_manifest(tmp_path / "manifest.csv")

    def test_bad_label_rejected(self, tmp_path):
        wav = tmp_path / "x.wav"
        save_wav(wav, Waveform(np.zeros(10), 16000))
        (tmp_path / "manifest.csv").write_text("path,label,split\nx.wav,spoof,train\n")
        with pytest.raises(ManifestError):
            read_manifest(tmp_path / "manifest.csv")

    def test_bad_header_rejected(self, tmp_path):
        (tmp_path / "manifest.csv").write_text("file,y,part\n")
        with pytest.raises(ManifestError):
            read_manifest(tmp_path / "manifest.csv")
