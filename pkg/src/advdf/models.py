"""Compact binary deepfake detectors with exact forward/backward passes.

SpecNetLite consumes an 80 x 398 cepstral plane (max-feature-map CNN);
RawNetLite consumes the raw 64,000-sample waveform (strided 1-D CNN).
Both produce a single logit with the convention logit > 0 => fake.

A Detector binds a model to its input representation so that loss and logit
gradients always reach the raw waveform, which is what the attacks need.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import fastconv, layers
from .features import LFCC_FRONT_END, MFCC_FRONT_END, CepstralFrontEnd

CHECKPOINT_MAGIC = b"ADVDF01"
CHECKPOINT_VERSION = 1


def bce_loss(logits, labels):
    """Numerically stable binary cross-entropy: softplus(z) - y * z."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    return np.logaddexp(0.0, z) - y * z


def bce_grad(logits, labels):
    """d loss / d logit = sigmoid(z) - y."""
    return expit(np.asarray(logits, dtype=np.float64)) - np.asarray(labels, dtype=np.float64)


def _uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class _ParamModel:
    """Shared parameter-vector plumbing; subclasses fill self.params."""

    params: dict[str, np.ndarray]

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def param_vector(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params.values()])

    def set_param_vector(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {vec.shape}")
        offset = 0
        for name, p in self.params.items():
            self.params[name] = vec[offset: offset + p.size].reshape(p.shape).copy()
            offset += p.size

    def zero_like_params(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.params.items()}


class SpecNetLite(_ParamModel):
    """Two MFM conv blocks over the coefficient x frame plane, GAP head.

    conv1 1->16 (3x3, pad 1), MFM to 8, 2x2 pool; conv2 8->16, MFM, pool;
    global average pool to 8 values; affine to one logit. 1,337 parameters.
    """

    kind = "specnet"
    input_plane = (80, 398)  # coefficients x frames

    def __init__(self, seed: int = 0):
        rng = np.random.default_rng([seed, 101])
        self.params = {
            "conv1_w": _uniform_init(rng, (1 * 9, 16), 9),
            "conv1_b": _uniform_init(rng, (16,), 9),
            "conv2_w": _uniform_init(rng, (8 * 9, 16), 72),
            "conv2_b": _uniform_init(rng, (16,), 72),
            "head_w": _uniform_init(rng, (8, 1), 8),
            "head_b": _uniform_init(rng, (1,), 8),
        }
        assert self.params["conv1_w"].size + 16 == 160
        assert self.params["conv2_w"].size + 16 == 1168
        assert self.n_params == 1337

    def _to_plane(self, feats):
        x = np.asarray(feats, dtype=np.float64)
        single = x.ndim == 2
        if single:
            x = x[None]
        T, C = x.shape[1], x.shape[2]
        if (C, T) != self.input_plane:
            raise ValueError(f"expected features (T, C) = {self.input_plane[::-1]}, got {(T, C)}")
        return x.transpose(0, 2, 1)[..., None], single  # (B, 80, 398, 1)

    def forward_cached(self, feats):
        x, single = self._to_plane(feats)
        p = self.params
        q1, c1 = fastconv.block_fwd(x, p["conv1_w"], p["conv1_b"])
        q2, c2 = fastconv.block_fwd(q1, p["conv2_w"], p["conv2_b"])
        g, gc = layers.gap_fwd(q2, (1, 2))
        z, ac = layers.affine_fwd(g, p["head_w"], p["head_b"])
        logits = z[:, 0]
        cache = (c1, c2, gc, ac, single)
        return (logits[0] if single else logits), cache

    def forward(self, feats):
        return self.forward_cached(feats)[0]

    def backward(self, cache, g_logits, need_param_grads: bool = True):
        """Backward from logit cotangents; returns (param_grads, g_features)."""
        c1, c2, gc, ac, single = cache
        p = self.params
        g = np.atleast_1d(np.asarray(g_logits, dtype=np.float64))[:, None]
        g, gw_head, gb_head = layers.affine_bwd(g, p["head_w"], ac)
        g = layers.gap_bwd(g, gc)
        g, gw2, gb2 = fastconv.block_bwd(g, c2)
        g, gw1, gb1 = fastconv.block_bwd(g, c1)
        g_feats = g[..., 0].transpose(0, 2, 1)  # back to (B, T, C)
        grads = None
        if need_param_grads:
            grads = {"conv1_w": gw1, "conv1_b": gb1, "conv2_w": gw2,
                     "conv2_b": gb2, "head_w": gw_head, "head_b": gb_head}
        return grads, (g_feats[0] if single else g_feats)


class RawNetLite(_ParamModel):
    """Strided 1-D CNN over the raw waveform, GAP head. 16,497 parameters."""

    kind = "rawnet"
    input_samples = 64_000
    STAGES = ((160, 80, 1, 16), (9, 4, 16, 32), (9, 4, 32, 32))  # (K, stride, Cin, Cout)

    def __init__(self, seed: int = 0):
        rng = np.random.default_rng([seed, 202])
        self.params = {}
        for i, (k, _, cin, cout) in enumerate(self.STAGES):
            self.params[f"conv{i}_w"] = _uniform_init(rng, (cin * k, cout), cin * k)
            self.params[f"conv{i}_b"] = _uniform_init(rng, (cout,), cin * k)
        self.params["head_w"] = _uniform_init(rng, (32, 1), 32)
        self.params["head_b"] = _uniform_init(rng, (1,), 32)
        assert self.n_params == 16_497

    @classmethod
    def stage_lengths(cls, n_samples: int) -> tuple[int, ...]:
        out = []
        n = n_samples
        for k, s, _, _ in cls.STAGES:
            n = layers.conv1d_out_length(n, k, s)
            out.append(n)
        return tuple(out)

    def forward_cached(self, waves):
        x = np.asarray(waves, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None]
        x = x[..., None]  # (B, L, 1)
        p = self.params
        caches = []
        for i, (k, s, _, _) in enumerate(self.STAGES):
            x, conv_cache = layers.conv1d_fwd(x, p[f"conv{i}_w"], p[f"conv{i}_b"], k, s)
            x, relu_mask = layers.relu_fwd(x)
            caches.append((conv_cache, relu_mask))
        g, gc = layers.gap_fwd(x, (1,))
        z, ac = layers.affine_fwd(g, p["head_w"], p["head_b"])
        logits = z[:, 0]
        return (logits[0] if single else logits), (caches, gc, ac, single)

    def forward(self, waves):
        return self.forward_cached(waves)[0]

    def backward(self, cache, g_logits, need_param_grads: bool = True):
        caches, gc, ac, single = cache
        p = self.params
        g = np.atleast_1d(np.asarray(g_logits, dtype=np.float64))[:, None]
        g, gw_head, gb_head = layers.affine_bwd(g, p["head_w"], ac)
        g = layers.gap_bwd(g, gc)
        grads = {"head_w": gw_head, "head_b": gb_head} if need_param_grads else None
        for i in reversed(range(len(self.STAGES))):
            conv_cache, relu_mask = caches[i]
            g = layers.relu_bwd(g, relu_mask)
            g, gw, gb = layers.conv1d_bwd(g, p[f"conv{i}_w"], conv_cache)
            if need_param_grads:
                grads[f"conv{i}_w"] = gw
                grads[f"conv{i}_b"] = gb
        g_waves = g[..., 0]
        return grads, (g_waves[0] if single else g_waves)


class Detector:
    """A model plus the front-end that maps waveforms to its inputs."""

    def __init__(self, model, front_end: CepstralFrontEnd | None = None,
                 name: str | None = None):
        self.model = model
        self.front_end = front_end
        if name is None:
            name = model.kind if front_end is None else f"{model.kind}-{front_end.kind}"
        self.name = name

    def prepare(self, waves, chunk: int = 64) -> np.ndarray:
        """Map (B, L) waveforms to model-ready inputs, chunked to bound memory."""
        waves = np.asarray(waves, dtype=np.float64)
        if self.front_end is None:
            return waves
        if waves.ndim == 1:
            return self.front_end.forward(waves)
        parts = [self.front_end.forward(waves[i: i + chunk])
                 for i in range(0, waves.shape[0], chunk)]
        return np.concatenate(parts, axis=0)

    def logits(self, waves, chunk: int = 64) -> np.ndarray:
        waves = np.asarray(waves, dtype=np.float64)
        if waves.ndim == 1:
            return self.model.forward(self.prepare(waves))
        out = [self.model.forward(self.prepare(waves[i: i + chunk]))
               for i in range(0, waves.shape[0], chunk)]
        return np.concatenate(out)

    def _input_grads(self, waves, make_cotangent):
        single = np.asarray(waves).ndim == 1
        xb = np.asarray(waves, dtype=np.float64)
        if single:
            xb = xb[None]
        if self.front_end is not None:
            feats, vjp = self.front_end.forward_vjp(xb)
            z, cache = self.model.forward_cached(feats)
        else:
            z, cache = self.model.forward_cached(xb)
        gz = make_cotangent(z)
        _, g_in = self.model.backward(cache, gz, need_param_grads=False)
        g_waves = vjp(g_in) if self.front_end is not None else g_in
        if single:
            return z[0], g_waves[0]
        return z, g_waves

    def loss_input_grads(self, waves, labels):
        """(per-sample BCE losses, d loss_b / d wave_b)."""
        y = np.asarray(labels, dtype=np.float64)
        z, g = self._input_grads(waves, lambda zz: bce_grad(zz, y))
        return bce_loss(z, y), g

    def logit_input_grads(self, waves):
        """(logits, d logit_b / d wave_b)."""
        return self._input_grads(waves, lambda zz: np.ones_like(np.atleast_1d(zz)))

    def loss_param_grads(self, model_inputs, labels):
        """Mean-batch BCE loss and parameter gradients on prepared inputs."""
        y = np.asarray(labels, dtype=np.float64)
        z, cache = self.model.forward_cached(model_inputs)
        losses = bce_loss(z, y)
        gz = bce_grad(z, y) / z.shape[0]
        grads, _ = self.model.backward(cache, gz)
        return float(losses.mean()), grads


DETECTOR_KINDS = ("specnet-lfcc", "specnet-mfcc", "rawnet")


def build_detector(kind: str, seed: int = 0) -> Detector:
    if kind == "specnet-lfcc":
        return Detector(SpecNetLite(seed), LFCC_FRONT_END, name=kind)
    if kind == "specnet-mfcc":
        return Detector(SpecNetLite(seed), MFCC_FRONT_END, name=kind)
    if kind == "rawnet":
        return Detector(RawNetLite(seed), name=kind)
    raise ValueError(f"unknown detector kind {kind!r}")


def expected_param_count(kind: str) -> int:
    return 16_497 if kind == "rawnet" else 1_337


# ---------------------------------------------------------------------------
# Checkpoints: magic, JSON header line, raw little-endian float64 parameters.


class CheckpointError(Exception):
    """Checkpoint file rejected; `reason` is one of magic/version/digest/
    truncated/kind/count."""

    def __init__(self, reason: str, message: str):
        super().__init__(message)
        self.reason = reason


@dataclass
class Checkpoint:
    kind: str
    params: np.ndarray
    epoch: int = 0
    seed: int = 0
    config_digest: str = ""
    version: int = CHECKPOINT_VERSION

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=np.float64).ravel()


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    payload = ckpt.params.astype("<f8").tobytes()
    header = {
        "version": ckpt.version,
        "kind": ckpt.kind,
        "count": int(ckpt.params.size),
        "epoch": int(ckpt.epoch),
        "seed": int(ckpt.seed),
        "config_digest": ckpt.config_digest,
        "params_sha256": hashlib.sha256(payload).hexdigest(),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC + b"\n")
        f.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        f.write(payload)


def load_checkpoint(path, expected_kind: str | None = None) -> Checkpoint:
    raw = Path(path).read_bytes()
    if not raw.startswith(CHECKPOINT_MAGIC + b"\n"):
        raise CheckpointError("magic", f"{path}: bad checkpoint magic")
    rest = raw[len(CHECKPOINT_MAGIC) + 1:]
    try:
        header_line, payload = rest.split(b"\n", 1)
        header = json.loads(header_line.decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError("truncated", f"{path}: unreadable header") from exc
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError("version", f"{path}: unsupported version {header.get('version')}")
    count = int(header["count"])
    if len(payload) != count * 8:
        raise CheckpointError("truncated",
                              f"{path}: expected {count * 8} payload bytes, got {len(payload)}")
    if hashlib.sha256(payload).hexdigest() != header["params_sha256"]:
        raise CheckpointError("digest", f"{path}: parameter digest mismatch")
    kind = header["kind"]
    if expected_kind is not None and kind != expected_kind:
        raise CheckpointError("kind", f"{path}: checkpoint is {kind!r}, expected {expected_kind!r}")
    if kind in DETECTOR_KINDS and count != expected_param_count(kind):
        raise CheckpointError("count", f"{path}: {count} parameters do not match kind {kind!r}")
    params = np.frombuffer(payload, dtype="<f8").copy()
    return Checkpoint(kind=kind, params=params, epoch=header["epoch"],
                      seed=header["seed"], config_digest=header["config_digest"])


def detector_from_checkpoint(ckpt: Checkpoint) -> Detector:
    det = build_detector(ckpt.kind, seed=ckpt.seed)
    det.model.set_param_vector(ckpt.params)
    return det
