import numpy as np
import pytest

from advdf import audio_io
from advdf.audio_io import SynthSpec, synthesize_dataset
from advdf.models import build_detector
from advdf.training import AdamW


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """Small deterministic corpus shared across test modules."""
    root = tmp_path_factory.mktemp("tiny_corpus")
    spec = SynthSpec(n_train=12, n_valid=6, n_test=10, seed=7, artifact_strength=0.9)
    records = synthesize_dataset(spec, root)
    return records, root


@pytest.fixture(scope="session")
def toy_rawnet(tiny_corpus):
    """RawNetLite fitted to the tiny train split; enough signal for attacks."""
    records, _ = tiny_corpus
    train = audio_io.split_records(records, "train")
    waves, labels = audio_io.load_split_waves(train)
    det = build_detector("rawnet", seed=1)
    opt = AdamW(det.model.params, lr=3e-3, weight_decay=0.0)
    for _ in range(60):
        loss, grads = det.loss_param_grads(waves, labels)
        opt.step(det.model.params, grads)
    return det


@pytest.fixture(scope="session")
def toy_specnet(tiny_corpus):
    records, _ = tiny_corpus
    train = audio_io.split_records(records, "train")
    waves, labels = audio_io.load_split_waves(train)
    det = build_detector("specnet-lfcc", seed=1)
    feats = det.prepare(waves)
    opt = AdamW(det.model.params, lr=3e-3, weight_decay=0.0)
    for _ in range(60):
        loss, grads = det.loss_param_grads(feats, labels)
        opt.step(det.model.params, grads)
    return det
